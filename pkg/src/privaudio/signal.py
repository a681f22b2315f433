"""Signal containers, problem dimensions and FFT convolution."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.io.wavfile
import scipy.signal

DEFAULT_FS = 16000


@dataclass(frozen=True, eq=False)
class Signal:
    """A finite, real, sampled signal.

    The sample buffer is copied on construction and marked read-only, so a
    ``Signal`` can be shared freely between threads and processes.
    """

    samples: np.ndarray
    sample_rate_hz: float = DEFAULT_FS

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "Signal":
        return Signal(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class ProblemDims:
    """Lengths and counts of one synthesis problem.

    ``L`` speakers, ``K`` listeners, messages of ``N`` samples and RIRs of
    ``L_h`` taps.  The drive length is derived as ``N - L_h + 1``.  For the
    noise-filter design ``L_n`` is the noise length and ``L_g`` the filter
    length, tied by ``L_g + L_n - 1 == L_x``.
    """

    L: int
    K: int
    N: int
    L_h: int
    L_n: int | None = None
    L_g: int | None = field(default=None)

    def __post_init__(self):
        if self.L < 1 or self.K < 1:
            raise ValueError("need at least one speaker and one listener")
        if not (self.N > self.L_h >= 1):
            raise ValueError(f"need N > L_h >= 1, got N={self.N}, L_h={self.L_h}")
        if self.L_n is not None and self.L_g is None:
            object.__setattr__(self, "L_g", self.L_x - self.L_n + 1)
        elif self.L_g is not None and self.L_n is None:
            object.__setattr__(self, "L_n", self.L_x - self.L_g + 1)
        if self.L_n is not None:
            if self.L_n < 1 or self.L_g < 1:
                raise ValueError(f"L_n={self.L_n}, L_g={self.L_g} must both be >= 1")
            if self.L_g + self.L_n - 1 != self.L_x:
                raise ValueError("L_g + L_n - 1 must equal L_x")

    @property
    def L_x(self) -> int:
        return self.N - self.L_h + 1

    @property
    def is_mccs(self) -> bool:
        return self.L_n is not None

    def with_noise_length(self, L_n: int) -> "ProblemDims":
        return ProblemDims(self.L, self.K, self.N, self.L_h, L_n=L_n)


def _as_array(a) -> np.ndarray:
    return a.samples if isinstance(a, Signal) else np.asarray(a, dtype=np.float64)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def fft_convolve(a: Signal, b: Signal) -> Signal:
    """Full linear convolution of two signals, computed with a power-of-two FFT."""
    if a.sample_rate_hz != b.sample_rate_hz:
        raise ValueError(
            f"sample rate mismatch: {a.sample_rate_hz} vs {b.sample_rate_hz}"
        )
    if len(a) == 0 or len(b) == 0:
        raise ValueError("cannot convolve an empty signal")
    return Signal(convolve_arrays(a.samples, b.samples), a.sample_rate_hz)


def convolve_arrays(a: np.ndarray, b: np.ndarray, axis: int = -1) -> np.ndarray:
    """Linear convolution along ``axis`` with numpy broadcasting of the others."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n_out = a.shape[axis] + b.shape[axis] - 1
    nfft = next_pow2(n_out)
    spec = scipy.fft.rfft(a, nfft, axis=axis) * scipy.fft.rfft(b, nfft, axis=axis)
    out = scipy.fft.irfft(spec, nfft, axis=axis)
    return np.take(out, np.arange(n_out), axis=axis)


def power(a) -> float:
    """Mean of squared samples."""
    x = _as_array(a)
    if x.size == 0:
        raise ValueError("power of an empty signal is undefined")
    return float(np.mean(x * x))


def resample(a: Signal, target_hz: float, taps_per_phase: int = 64, beta: float = 8.0) -> Signal:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc kernel.

    Output length is ``round(len(a) * target_hz / rate)``.
    """
    if not target_hz > 0:
        raise ValueError("target rate must be positive")
    rate = a.sample_rate_hz
    n_out = int(round(len(a) * target_hz / rate))
    if target_hz == rate:
        return Signal(a.samples, rate)
    up, down = _rational_ratio(target_hz, rate)
    g = gcd(up, down)
    up, down = up // g, down // g
    max_rate = max(up, down)
    n_taps = taps_per_phase * max_rate + 1
    h = scipy.signal.firwin(n_taps, 1.0 / max_rate, window=("kaiser", beta))
    y = scipy.signal.resample_poly(a.samples, up, down, window=h)
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.size))
    return Signal(y, float(target_hz))


def _rational_ratio(target: float, rate: float) -> tuple[int, int]:
    t, r = float(target), float(rate)
    if t.is_integer() and r.is_integer():
        return int(t), int(r)
    from fractions import Fraction

    frac = Fraction(t / r).limit_denominator(1000)
    return frac.numerator, frac.denominator


def read_wav(path) -> tuple[np.ndarray, float]:
    """Read a WAV file as float64, shape ``(channels, samples)``.

    PCM 16-bit is scaled to [-1, 1); float files are returned as stored.
    """
    fs, data = scipy.io.wavfile.read(Path(path))
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    data = np.atleast_2d(data.T) if data.ndim == 2 else data[None, :]
    return data, float(fs)


def write_wav(path, data, fs: float, subtype: str = "float32") -> None:
    """Write ``(channels, samples)`` (or 1-D mono) data as PCM16, float32 or float64."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if subtype == "float32":
        out = data.T.astype(np.float32)
    elif subtype == "float64":
        out = data.T.copy()
    elif subtype == "pcm16":
        out = np.clip(np.round(data.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    if out.shape[1] == 1:
        out = out[:, 0]
    scipy.io.wavfile.write(Path(path), int(round(fs)), out)


def read_signal(path) -> Signal:
    """Read a mono WAV file (first channel if multichannel)."""
    data, fs = read_wav(path)
    return Signal(data[0], fs)
