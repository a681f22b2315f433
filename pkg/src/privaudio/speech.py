"""Deterministic speech-like test material and message preparation.

``synthesize`` produces a crude source-filter "babble": syllables made of a
fricative burst and a voiced nucleus whose three formants glide between
vowel targets, with a syllabic (~4 Hz) amplitude rhythm and short pauses.
It is not speech, but it has the band-limited envelope modulations STOI
responds to, and it is free of licensing concerns.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import scipy.signal

from .signal import DEFAULT_FS, Signal, read_signal, resample

# (F1, F2, F3) in Hz for a handful of vowels.
VOWELS = np.array([
    [730, 1090, 2440],
    [270, 2290, 3010],
    [300, 870, 2240],
    [530, 1840, 2480],
    [570, 840, 2410],
    [660, 1720, 2410],
    [440, 1020, 2240],
])
BANDWIDTHS = np.array([90.0, 110.0, 170.0])
BUNDLED = ("speechlike_a.wav", "speechlike_b.wav")


def _resonator(freq: float, bw: float, fs: float):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [1.0 - r], a


def synthesize(seed: int, duration: float = 3.0, fs: float = DEFAULT_FS) -> Signal:
    """Speech-like signal of ``duration`` seconds, peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    n_total = int(round(duration * fs))
    out = np.zeros(n_total)
    block = int(0.005 * fs)
    pos = int(rng.uniform(0.02, 0.06) * fs)
    f0_base = rng.uniform(95, 190)
    prev = VOWELS[rng.integers(len(VOWELS))].astype(float)
    while pos < n_total:
        # fricative onset
        if rng.random() < 0.6:
            n_fric = int(rng.uniform(0.03, 0.09) * fs)
            lo = rng.uniform(1800, 3500)
            b, a = scipy.signal.butter(4, [lo, min(lo * 2.2, 0.45 * fs)], btype="bandpass", fs=fs)
            burst = scipy.signal.lfilter(b, a, rng.standard_normal(n_fric))
            burst *= np.hanning(n_fric) * rng.uniform(0.15, 0.35)
            end = min(pos + n_fric, n_total)
            out[pos:end] += burst[: end - pos]
            pos = end - int(0.01 * fs)
        # voiced nucleus with formant glide
        n_voiced = int(rng.uniform(0.09, 0.26) * fs)
        target = VOWELS[rng.integers(len(VOWELS))].astype(float)
        f0 = f0_base * rng.uniform(0.85, 1.2) * np.linspace(1.05, 0.9, n_voiced)
        f0 *= 1 + 0.01 * rng.standard_normal(n_voiced).cumsum() / np.sqrt(np.arange(1, n_voiced + 1))
        phase = np.cumsum(f0 / fs)
        pulses = np.diff(np.floor(phase), prepend=0.0)
        source = scipy.signal.lfilter([1.0], [1.0, -0.97], pulses)
        source = scipy.signal.lfilter([1.0], [1.0, -0.9], source)
        voiced = np.zeros(n_voiced)
        zi = [np.zeros(2) for _ in range(3)]
        for start in range(0, n_voiced, block):
            seg = source[start:start + block]
            frac = start / n_voiced
            formants = prev + (target - prev) * min(1.0, 2.5 * frac)
            for j in range(3):
                b, a = _resonator(formants[j], BANDWIDTHS[j], fs)
                seg, zi[j] = scipy.signal.lfilter(b, a, seg, zi=zi[j])
            voiced[start:start + block] = seg
        env = np.sin(np.pi * np.linspace(0, 1, n_voiced)) ** 0.6
        voiced = np.diff(voiced, prepend=0.0) * env
        voiced /= np.max(np.abs(voiced)) + 1e-12
        end = min(pos + n_voiced, n_total)
        out[pos:end] += rng.uniform(0.5, 1.0) * voiced[: end - pos]
        pos = end
        prev = target
        # inter-syllable gap, occasionally a longer word break
        gap = rng.uniform(0.01, 0.05) if rng.random() < 0.7 else rng.uniform(0.08, 0.16)
        pos += int(gap * fs)
    out *= 0.5 / np.max(np.abs(out))
    return Signal(out, fs)


def bundled_clip(index: int) -> Signal:
    """One of the two clips shipped with the package (16 kHz, 3 s)."""
    ref = resources.files("privaudio") / "data" / BUNDLED[index]
    with resources.as_file(ref) as path:
        return read_signal(path)


def load_clip(source, fs: float = DEFAULT_FS) -> Signal:
    """Clip from a WAV path or a bundled-clip index, resampled to ``fs``."""
    sig = bundled_clip(int(source)) if isinstance(source, int) else read_signal(Path(source))
    return sig if sig.sample_rate_hz == fs else resample(sig, fs)


def active_segment(clip: Signal, length: int, frame: int = 256) -> np.ndarray:
    """The ``length``-sample stretch of ``clip`` with the highest energy."""
    x = clip.samples
    if x.size <= length:
        return np.pad(x, (0, length - x.size))
    energy = np.convolve(x * x, np.ones(length), mode="valid")
    # Search on a coarse grid so the choice is insensitive to rounding.
    start = int(np.argmax(energy[::frame])) * frame
    return x[start:start + length].copy()


def make_message(clip: Signal, N: int, lead_in: int = 0, rms: float = 0.1, tail: int = 0) -> np.ndarray:
    """An ``N``-sample message: ``lead_in`` zeros, speech, then ``tail`` zeros.

    The leading silence leaves room for the propagation delay from the
    speakers; samples before the earliest arrival cannot be reproduced.  The
    trailing silence lets the room's reverberation die out inside the
    message window, which a reverberant channel needs in order to match the
    end of the message.  ``rms`` is measured over the whole message.
    """
    if lead_in < 0 or tail < 0 or lead_in + tail >= N:
        raise ValueError(f"lead_in={lead_in} and tail={tail} leave no speech in N={N}")
    msg = np.zeros(N)
    msg[lead_in:N - tail] = active_segment(clip, N - tail - lead_in)
    level = np.sqrt(np.mean(msg * msg))
    if level == 0:
        raise ValueError("clip is silent")
    return msg * (rms / level)
