"""Matrix-free block-Toeplitz channel operators and reconstruction checks.

Stacked-vector layout: drive vectors are ``[x_1, ..., x_L]`` (each ``L_x``
samples), message vectors are ``[y_1, ..., y_K]`` (each ``N`` samples).
The same layout is used by every file written by this package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.fft
from scipy.sparse.linalg import LinearOperator

from .signal import DEFAULT_FS, ProblemDims, Signal

ONSET_FRACTION = 0.01


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """K x L grid of RIRs ``h_ki`` for messages of ``N`` samples."""

    rirs: np.ndarray
    N: int
    sample_rate_hz: float = DEFAULT_FS

    def __post_init__(self):
        rirs = np.array(self.rirs, dtype=np.float64)
        if rirs.ndim != 3:
            raise ValueError(f"rirs must have shape (K, L, L_h), got {rirs.shape}")
        if not np.all(np.isfinite(rirs)):
            raise ValueError("RIRs must be finite")
        if np.any(~np.any(rirs != 0, axis=2)):
            raise ValueError("every listener-speaker RIR needs at least one nonzero tap")
        rirs.flags.writeable = False
        object.__setattr__(self, "rirs", rirs)
        ProblemDims(rirs.shape[1], rirs.shape[0], self.N, rirs.shape[2])

    @classmethod
    def from_signals(cls, grid, N: int) -> "ChannelSet":
        """Build from a nested ``[k][i]`` list of :class:`Signal` RIRs."""
        rates = {s.sample_rate_hz for row in grid for s in row}
        lengths = {len(s) for row in grid for s in row}
        if len(rates) != 1 or len(lengths) != 1:
            raise ValueError("all RIRs must share one length and one sample rate")
        return cls(np.array([[s.samples for s in row] for row in grid]), N, rates.pop())

    @property
    def K(self) -> int:
        return self.rirs.shape[0]

    @property
    def L(self) -> int:
        return self.rirs.shape[1]

    @property
    def L_h(self) -> int:
        return self.rirs.shape[2]

    @property
    def L_x(self) -> int:
        return self.N - self.L_h + 1

    @property
    def dims(self) -> ProblemDims:
        return ProblemDims(self.L, self.K, self.N, self.L_h)

    def rir(self, k: int, i: int) -> Signal:
        return Signal(self.rirs[k, i], self.sample_rate_hz)

    def with_rirs(self, rirs) -> "ChannelSet":
        return ChannelSet(rirs, self.N, self.sample_rate_hz)

    def first_arrivals(self) -> np.ndarray:
        """Onset (first tap above 1% of the RIR peak), shape ``(K, L)``."""
        mag = np.abs(self.rirs)
        peak = mag.max(axis=2, keepdims=True)
        return np.argmax(mag > ONSET_FRACTION * peak, axis=2)


@dataclass(frozen=True, eq=False)
class NoiseBank:
    """One Gaussian noise sequence ``n_i`` per speaker, reproducible from ``seed``."""

    noises: np.ndarray
    seed: int
    std: float = 1.0

    def __post_init__(self):
        arr = np.array(self.noises, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("noises must have shape (L, L_n)")
        arr.flags.writeable = False
        object.__setattr__(self, "noises", arr)

    @classmethod
    def draw(cls, L: int, L_n: int, std: float = 1.0, seed: int = 0) -> "NoiseBank":
        # Draw unit-variance first so that rescaling std keeps the shape exactly.
        rng = np.random.Generator(np.random.Philox(seed))
        return cls(std * rng.standard_normal((L, L_n)), seed, std)

    @classmethod
    def unit(cls, L: int) -> "NoiseBank":
        """Degenerate bank with ``n_i = [1]``."""
        return cls(np.ones((L, 1)), seed=0, std=1.0)

    @property
    def L(self) -> int:
        return self.noises.shape[0]

    @property
    def L_n(self) -> int:
        return self.noises.shape[1]


def _check_len(v: np.ndarray, expected: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != expected:
        raise ValueError(f"{what} must be a vector of length {expected}, got shape {v.shape}")
    return v


class ChannelOperator(LinearOperator):
    """``H`` (shape ``N*K x L*L_x``) applied via FFT.

    Each listener block is ``sum_i h_ki * x_i``; the full linear convolution
    is exactly ``N`` samples long, so no truncation is involved.  The adjoint
    is the matching correlation restricted to the first ``L_x`` lags.
    """

    def __init__(self, channels: ChannelSet, filters: np.ndarray | None = None, in_len: int | None = None):
        self.channels = channels
        self.K, self.L, self.N = channels.K, channels.L, channels.N
        self.in_len = channels.L_x if in_len is None else in_len
        self.nfft = scipy.fft.next_fast_len(self.N, real=True)
        taps = channels.rirs if filters is None else filters
        self._spec = scipy.fft.rfft(taps, self.nfft, axis=2)
        self._spec.flags.writeable = False
        super().__init__(np.float64, (self.N * self.K, self.L * self.in_len))

    def _matvec(self, x):
        x = _check_len(np.ravel(x), self.shape[1], "drive vector").reshape(self.L, self.in_len)
        X = scipy.fft.rfft(x, self.nfft, axis=1)
        Y = np.einsum("kif,if->kf", self._spec, X)
        return scipy.fft.irfft(Y, self.nfft, axis=1)[:, : self.N].reshape(-1)

    def _rmatvec(self, y):
        y = _check_len(np.ravel(y), self.shape[0], "message vector").reshape(self.K, self.N)
        Y = scipy.fft.rfft(y, self.nfft, axis=1)
        X = np.einsum("kif,kf->if", self._spec.conj(), Y)
        return scipy.fft.irfft(X, self.nfft, axis=1)[:, : self.in_len].reshape(-1)

    def _adjoint(self):
        return _Adjoint(self)


class _Adjoint(LinearOperator):
    def __init__(self, op: ChannelOperator):
        self.op = op
        super().__init__(np.float64, (op.shape[1], op.shape[0]))

    def _matvec(self, y):
        return self.op._rmatvec(y)

    def _rmatvec(self, x):
        return self.op._matvec(x)


class MccsOperator(ChannelOperator):
    """``H N``: noise filtering ``x_i = n_i * g_i`` followed by the room.

    The combined per-pair filter ``h_ki * n_i`` is formed once in the
    frequency domain.
    """

    def __init__(self, channels: ChannelSet, bank: NoiseBank):
        if bank.L != channels.L:
            raise ValueError(f"noise bank has {bank.L} sequences, channel has {channels.L} speakers")
        L_g = channels.L_x - bank.L_n + 1
        if L_g < 1:
            raise ValueError(
                f"noise length {bank.L_n} leaves no room for a filter (L_x={channels.L_x})"
            )
        self.bank = bank
        self.L_g = L_g
        super().__init__(channels, in_len=L_g)
        self._spec = self._spec * scipy.fft.rfft(bank.noises, self.nfft, axis=1)[None, :, :]
        self._spec.flags.writeable = False


def apply_H(channels: ChannelSet, x) -> np.ndarray:
    return ChannelOperator(channels).matvec(x)


def adjoint_H(channels: ChannelSet, y) -> np.ndarray:
    return ChannelOperator(channels).rmatvec(y)


def apply_HN(channels: ChannelSet, bank: NoiseBank, g) -> np.ndarray:
    return MccsOperator(channels, bank).matvec(g)


def adjoint_HN(channels: ChannelSet, bank: NoiseBank, y) -> np.ndarray:
    return MccsOperator(channels, bank).rmatvec(y)


def filter_noise(bank: NoiseBank, g) -> np.ndarray:
    """Drive signals ``x_i = n_i * g_i`` as an ``(L, L_n + L_g - 1)`` array."""
    g = np.asarray(g, dtype=np.float64).reshape(bank.L, -1)
    n_out = bank.L_n + g.shape[1] - 1
    nfft = scipy.fft.next_fast_len(n_out, real=True)
    spec = scipy.fft.rfft(bank.noises, nfft, axis=1) * scipy.fft.rfft(g, nfft, axis=1)
    return scipy.fft.irfft(spec, nfft, axis=1)[:, :n_out]


# -- reconstruction conditions -------------------------------------------------


class MccsCheck(NamedTuple):
    passed: bool
    margin: int


class NullspaceCheck(NamedTuple):
    rows_cover_message: bool
    wide_enough: bool
    covers_delay_spread: bool
    max_relative_delay: int

    @property
    def passed(self) -> bool:
        return self.rows_cover_message and self.wide_enough and self.covers_delay_spread

    @property
    def solvable(self) -> bool:
        """Conditions (a) and (b), the ones a solve actually depends on."""
        return self.rows_cover_message and self.wide_enough


def check_mccs_condition(dims: ProblemDims) -> MccsCheck:
    """``H N`` can have full row rank only if ``L * L_g >= N * K``."""
    if dims.L_g is None:
        raise ValueError("dims has no noise/filter split")
    margin = dims.L * dims.L_g - dims.N * dims.K
    return MccsCheck(margin >= 0, margin)


def relative_delays(channels: ChannelSet) -> np.ndarray:
    """Per-listener onset spread across speakers, in samples."""
    onsets = channels.first_arrivals()
    return onsets.max(axis=1) - onsets.min(axis=1)


def check_nullspace_conditions(dims: ProblemDims, channels: ChannelSet | None = None) -> NullspaceCheck:
    """Necessary conditions for exact reconstruction with ``x = s + w``.

    (a) ``L_x + L_h - 1 >= N``; (b) ``L * L_x >= N * K``; (c) ``L_x`` exceeds
    the largest per-listener onset spread.  The onset spread is our reading
    of "relative time delay": latest minus earliest first arrival over the
    speakers, with arrival taken at 1% of each RIR's peak.
    """
    a = dims.L_x + dims.L_h - 1 >= dims.N
    b = dims.L * dims.L_x >= dims.N * dims.K
    if channels is None:
        spread = 0
    else:
        if np.any(~np.any(channels.rirs != 0, axis=2)):
            raise ValueError("all-zero RIR: first arrival undefined")
        spread = int(relative_delays(channels).max())
    return NullspaceCheck(a, b, dims.L_x > spread, spread)
