"""Objective measures: STOI, relative reconstruction error and SNR."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .signal import Signal, resample

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class StoiConfig:
    """Parameters of the short-time objective intelligibility measure.

    The defaults are those of the original measure: signals are resampled to
    10 kHz, analysed with 256-sample Hann frames (50% overlap, zero-padded
    to a 512-point FFT), grouped into 15 third-octave bands from 150 Hz and
    compared over 30-frame (384 ms) segments with the degraded envelope
    clipped at -15 dB SDR.  Frames more than 40 dB below the loudest clean
    frame are dropped first.
    """

    fs: float = 10000.0
    frame: int = 256
    hop: int = 128
    nfft: int = 512
    bands: int = 15
    min_center_hz: float = 150.0
    segment: int = 30
    beta_db: float = -15.0
    dyn_range_db: float = 40.0

    def __post_init__(self):
        if min(self.fs, self.frame, self.hop, self.nfft, self.bands, self.min_center_hz, self.segment) <= 0:
            raise ValueError("STOI parameters must be positive")
        if self.band_edges()[1][-1] >= self.fs / 2:
            raise ValueError("highest band edge must stay below the internal Nyquist frequency")

    def band_edges(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(self.bands)
        return (self.min_center_hz * 2.0 ** ((2 * k - 1) / 6),
                self.min_center_hz * 2.0 ** ((2 * k + 1) / 6))

    def band_matrix(self) -> np.ndarray:
        """``(bands, nfft // 2 + 1)`` 0/1 matrix grouping FFT bins into bands."""
        freqs = np.arange(self.nfft // 2 + 1) * self.fs / self.nfft
        lo, hi = self.band_edges()
        out = np.zeros((self.bands, freqs.size))
        for b in range(self.bands):
            # Edges snap to the nearest bin; the upper one is exclusive.
            i0 = int(np.argmin(np.abs(freqs - lo[b])))
            i1 = int(np.argmin(np.abs(freqs - hi[b])))
            out[b, i0:i1] = 1.0
        return out


DEFAULT_STOI = StoiConfig()


def _window(n: int) -> np.ndarray:
    # Symmetric Hann without its zero end points.
    return np.hanning(n + 2)[1:-1]


def _frames(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    count = 1 + (x.size - frame) // hop if x.size >= frame else 0
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    return x[idx]


def _drop_silent(x: np.ndarray, y: np.ndarray, cfg: StoiConfig) -> tuple[np.ndarray, np.ndarray]:
    w = _window(cfg.frame)
    xf = _frames(x, cfg.frame, cfg.hop) * w
    yf = _frames(y, cfg.frame, cfg.hop) * w
    level = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = level > level.max() - cfg.dyn_range_db
    xf, yf = xf[keep], yf[keep]
    n = cfg.hop * (len(xf) - 1) + cfg.frame if len(xf) else 0
    xs, ys = np.zeros(n), np.zeros(n)
    for j in range(len(xf)):
        xs[j * cfg.hop: j * cfg.hop + cfg.frame] += xf[j]
        ys[j * cfg.hop: j * cfg.hop + cfg.frame] += yf[j]
    return xs, ys


def _band_envelopes(x: np.ndarray, cfg: StoiConfig, obm: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x, cfg.frame, cfg.hop) * _window(cfg.frame), cfg.nfft, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)


def _as_samples(a, fs):
    if isinstance(a, Signal):
        return a.samples, a.sample_rate_hz
    if fs is None:
        raise ValueError("sample rate required for plain arrays")
    return np.asarray(a, dtype=np.float64).reshape(-1), float(fs)


def stoi(clean, degraded, fs: float | None = None, config: StoiConfig = DEFAULT_STOI) -> float:
    """Short-time objective intelligibility of ``degraded`` given ``clean``.

    Both inputs are :class:`Signal` objects, or arrays with ``fs`` given.
    Raises ``ValueError`` for silent clean input or when fewer than
    ``config.segment`` frames survive silence removal.
    """
    x, fx = _as_samples(clean, fs)
    y, fy = _as_samples(degraded, fs)
    if fx != fy:
        raise ValueError("clean and degraded sample rates differ")
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if not np.any(x):
        raise ValueError("clean signal is silent")
    if fx != config.fs:
        x = resample(Signal(x, fx), config.fs).samples
        y = resample(Signal(y, fx), config.fs).samples
    x, y = _drop_silent(x, y, config)
    obm = config.band_matrix()
    X = _band_envelopes(x, config, obm)
    Y = _band_envelopes(y, config, obm)
    J = config.segment
    if X.shape[1] < J:
        raise ValueError(f"only {X.shape[1]} frames after silence removal, need {J}")
    # (bands, segments, J) sliding windows with a one-frame hop
    Xs = np.lib.stride_tricks.sliding_window_view(X, J, axis=1)
    Ys = np.lib.stride_tricks.sliding_window_view(Y, J, axis=1)
    gain = np.linalg.norm(Xs, axis=2, keepdims=True) / (np.linalg.norm(Ys, axis=2, keepdims=True) + _EPS)
    bound = 1 + 10 ** (-config.beta_db / 20)
    Yc = np.minimum(Ys * gain, Xs * bound)
    Yc = Yc - Yc.mean(axis=2, keepdims=True)
    Xc = Xs - Xs.mean(axis=2, keepdims=True)
    num = np.sum(Xc * Yc, axis=2)
    den = np.linalg.norm(Xc, axis=2) * np.linalg.norm(Yc, axis=2) + _EPS
    return float(np.mean(num / den))


def _pair(reference, test):
    ref = reference.samples if isinstance(reference, Signal) else np.asarray(reference, dtype=np.float64)
    tst = test.samples if isinstance(test, Signal) else np.asarray(test, dtype=np.float64)
    if ref.shape != tst.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {tst.shape}")
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0:
        raise ValueError("reference is all zero")
    return ref, tst, ref_norm


def relative_error(reference, test) -> float:
    """``||test - reference|| / ||reference||``."""
    ref, tst, ref_norm = _pair(reference, test)
    return float(np.linalg.norm(tst - ref) / ref_norm)


def relative_error_optscale(reference, test) -> float:
    """Relative error after the best scalar gain on ``test``."""
    ref, tst, ref_norm = _pair(reference, test)
    tt = tst @ tst
    gain = (ref @ tst) / tt if tt > 0 else 0.0
    return float(np.linalg.norm(gain * tst - ref) / ref_norm)


def snr_db(reference, test) -> float:
    """``10 log10(||ref||^2 / ||test - ref||^2)``; ``inf`` when they are equal."""
    ref, tst, ref_norm = _pair(reference, test)
    err = np.linalg.norm(tst - ref)
    if err == 0:
        return math.inf
    return float(20 * np.log10(ref_norm / err))


def align_lag(reference, test, max_lag: int | None = None) -> int:
    """Lag (in samples) maximizing the cross-correlation of ``test`` against ``reference``.

    Positive when ``test`` is delayed.  Diagnostic only; never applied.
    """
    ref, tst, _ = _pair(reference, test)
    xc = scipy.signal.correlate(tst, ref, mode="full", method="fft")
    lags = np.arange(-ref.size + 1, ref.size)
    if max_lag is not None:
        sel = np.abs(lags) <= max_lag
        xc, lags = xc[sel], lags[sel]
    return int(lags[np.argmax(np.abs(xc))])
