"""Drive-signal designers, power normalization and rendering.

Two designs are provided:

* noise-filter synthesis: every speaker plays its own Gaussian noise
  ``n_i`` through a designed filter ``g_i``, with ``g`` chosen so the room
  delivers the messages at the listeners;
* nullspace jamming: a least-norm message carrier ``s`` plus a random
  vector ``w`` projected onto the nullspace of ``H``, which the listeners
  never hear.

Drives are ``(L, L_x)`` arrays; messages are ``(K, N)`` arrays.  Flattening
either in C order gives the stacked vectors used by the operators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from .channel import (
    ChannelOperator,
    ChannelSet,
    MccsOperator,
    NoiseBank,
    check_mccs_condition,
    check_nullspace_conditions,
    filter_noise,
)
from .signal import DEFAULT_FS, ProblemDims, Signal, read_wav, write_wav
from .solvers import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    CarrierSolution,
    SolveReport,
    cgls,
    least_norm_carrier,
    row_space_residual,
)


class InfeasibleDesign(ValueError):
    """Raised when a reconstruction condition rules a design out."""

    def __init__(self, message: str, margin: int | None = None):
        super().__init__(message)
        self.margin = margin


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MessageSet:
    """``K`` intended messages of ``N`` samples each."""

    messages: np.ndarray
    sample_rate_hz: float = DEFAULT_FS

    def __post_init__(self):
        arr = _readonly(self.messages)
        if arr.ndim != 2 or arr.shape[1] == 0:
            raise ValueError(f"messages must have shape (K, N), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("messages must be finite")
        object.__setattr__(self, "messages", arr)

    @classmethod
    def from_signals(cls, signals) -> "MessageSet":
        rates = {s.sample_rate_hz for s in signals}
        if len(rates) != 1 or len({len(s) for s in signals}) != 1:
            raise ValueError("messages must share one length and one sample rate")
        return cls(np.stack([s.samples for s in signals]), rates.pop())

    @property
    def K(self) -> int:
        return self.messages.shape[0]

    @property
    def N(self) -> int:
        return self.messages.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        return self.messages.reshape(-1)

    def message(self, k: int) -> Signal:
        return Signal(self.messages[k], self.sample_rate_hz)


@dataclass(frozen=True, eq=False)
class MccsDesign:
    """Noise bank, designed filters and the resulting drive ``x_i = n_i * g_i``."""

    bank: NoiseBank
    filters: np.ndarray
    drive: np.ndarray
    report: SolveReport

    @property
    def L_g(self) -> int:
        return self.filters.shape[1]

    @property
    def L_n(self) -> int:
        return self.bank.L_n

    def recompute_drive(self) -> np.ndarray:
        return filter_noise(self.bank, self.filters)


@dataclass(frozen=True, eq=False)
class NullspaceDesign:
    """Carrier, raw noise, its row-space coefficients and the projected jam.

    ``jam == noise - H^T coefficients`` and ``drive == carrier + jam``.
    """

    carrier: np.ndarray
    noise: np.ndarray
    noise_std: float
    seed: int
    coefficients: np.ndarray
    jam: np.ndarray
    drive: np.ndarray
    carrier_report: SolveReport
    jam_report: SolveReport


def _check_messages(channels: ChannelSet, msgs: MessageSet):
    if msgs.K != channels.K or msgs.N != channels.N:
        raise ValueError(
            f"messages are {msgs.K} x {msgs.N}, channels expect {channels.K} x {channels.N}"
        )


def default_noise_length(L_x: int) -> int:
    return math.ceil(L_x / 2)


def design_mccs(channels: ChannelSet, msgs: MessageSet, L_n: int | None = None, noise_std: float = 1.0,
                seed: int = 0, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> MccsDesign:
    """Filters ``g_i`` minimizing ``||H N g - y_in||`` for a seeded noise bank.

    ``L_n`` defaults to ``ceil(L_x / 2)``.  Raises :class:`InfeasibleDesign`
    when ``L * L_g < N * K``; a solve that stops short of ``tol`` still
    returns a design, with ``report.converged`` false.
    """
    _check_messages(channels, msgs)
    if L_n is None:
        L_n = default_noise_length(channels.L_x)
    if not 1 <= L_n <= channels.L_x:
        raise InfeasibleDesign(f"L_n={L_n} must lie in [1, L_x={channels.L_x}]")
    dims = ProblemDims(channels.L, channels.K, channels.N, channels.L_h, L_n=L_n)
    check = check_mccs_condition(dims)
    if not check.passed:
        raise InfeasibleDesign(
            f"L*L_g = {dims.L * dims.L_g} < N*K = {dims.N * dims.K} (margin {check.margin})",
            check.margin,
        )
    if not noise_std > 0:
        raise ValueError("noise_std must be positive")
    # Solve against the unit-variance bank and rescale the filters afterwards.
    # In exact arithmetic CGLS is scale-equivariant anyway; doing it this way
    # keeps the drive bit-identical across noise_std instead of letting
    # rounding differences grow over thousands of iterations.
    unit = NoiseBank.draw(channels.L, L_n, 1.0, seed)
    g, report = cgls(MccsOperator(channels, unit), msgs.stacked, tol, max_iter)
    g = g.reshape(channels.L, dims.L_g)
    bank = NoiseBank.draw(channels.L, L_n, noise_std, seed)
    return MccsDesign(bank, _readonly(g / noise_std), _readonly(filter_noise(unit, g)), report)


def draw_jam_seed(L: int, L_x: int, noise_std: float, seed: int) -> np.ndarray:
    """Raw noise ``v`` for the nullspace design (standard normal times std)."""
    rng = np.random.Generator(np.random.Philox(seed))
    return noise_std * rng.standard_normal((L, L_x))


def design_nullspace(channels: ChannelSet, msgs: MessageSet, noise_std: float = 1.0, seed: int = 0,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                     carrier: CarrierSolution | None = None) -> NullspaceDesign:
    """Drive ``x = s + w`` with ``H s = y_in`` and ``H w = 0``.

    The carrier does not depend on the noise, so a ``carrier`` already
    solved for the same channels and messages may be passed in to skip
    that solve.  Raises :class:`InfeasibleDesign` when ``H`` is taller than
    wide or the drive is too short to cover the message.
    """
    _check_messages(channels, msgs)
    check = check_nullspace_conditions(channels.dims)
    if not check.solvable:
        raise InfeasibleDesign(
            f"nullspace design needs L*L_x >= N*K and L_x + L_h - 1 >= N ({check})",
            channels.L * channels.L_x - channels.N * channels.K,
        )
    H = ChannelOperator(channels)
    shape = (channels.L, channels.L_x)
    if carrier is None:
        carrier = least_norm_carrier(H, msgs.stacked, tol, max_iter)
    elif carrier.carrier.shape != (H.shape[1],):
        raise ValueError("carrier does not match the channel dimensions")
    v = draw_jam_seed(channels.L, channels.L_x, noise_std, seed)
    proj = row_space_residual(H, v.reshape(-1), tol, max_iter)
    s = carrier.carrier.reshape(shape)
    w = proj.residual.reshape(shape)
    return NullspaceDesign(
        carrier=_readonly(s),
        noise=_readonly(v),
        noise_std=float(noise_std),
        seed=int(seed),
        coefficients=_readonly(proj.coefficients),
        jam=_readonly(w),
        drive=_readonly(s + w),
        carrier_report=carrier.report,
        jam_report=proj.report,
    )


# -- power and rendering -----------------------------------------------------------


def drive_power(drive) -> float:
    """Mean power over all speakers and samples."""
    drive = np.asarray(drive, dtype=np.float64)
    if drive.size == 0:
        raise ValueError("empty drive")
    return float(np.mean(drive * drive))


def normalize_power(drive, target_power: float) -> tuple[np.ndarray, float]:
    """Scale every speaker by one common factor so the mean power hits ``target_power``."""
    if not target_power > 0:
        raise ValueError("target_power must be positive")
    drive = np.asarray(drive, dtype=np.float64)
    p = drive_power(drive)
    if p == 0:
        raise ValueError("cannot normalize an all-zero drive")
    scale = math.sqrt(target_power / p)
    return drive * scale, scale


def render_field(drive, rirs) -> np.ndarray:
    """Received signals at many points.

    ``drive`` is ``(L, L_x)`` and ``rirs`` is ``(P, L, L_h)``; the result is
    ``(P, L_x + L_h - 1)``, the full linear convolution summed over speakers.
    """
    drive = np.asarray(drive, dtype=np.float64)
    rirs = np.asarray(rirs, dtype=np.float64)
    if drive.ndim != 2 or rirs.ndim != 3 or rirs.shape[1] != drive.shape[0]:
        raise ValueError(f"drive {drive.shape} does not fit RIRs {rirs.shape}")
    n_out = drive.shape[1] + rirs.shape[2] - 1
    nfft = scipy.fft.next_fast_len(n_out, real=True)
    X = scipy.fft.rfft(drive, nfft, axis=1)
    Hf = scipy.fft.rfft(rirs, nfft, axis=2)
    return scipy.fft.irfft(np.einsum("pif,if->pf", Hf, X), nfft, axis=1)[:, :n_out]


def render_at(drive, rirs) -> np.ndarray:
    """Received signal at one point with RIRs ``(L, L_h)`` from each speaker."""
    rirs = np.asarray(rirs, dtype=np.float64)
    if rirs.ndim != 2:
        raise ValueError(f"rirs must have shape (L, L_h), got {rirs.shape}")
    return render_field(drive, rirs[None])[0]


def render_listeners(drive, channels: ChannelSet) -> np.ndarray:
    """``(K, N)`` received messages at the designed listeners."""
    return render_field(drive, channels.rirs)


def dropout(drive, keep) -> np.ndarray:
    """Silence every speaker not listed in ``keep`` (0-based indices)."""
    drive = np.asarray(drive, dtype=np.float64)
    keep = sorted(set(int(i) for i in keep))
    if not keep:
        raise ValueError("keep set must not be empty")
    if keep[0] < 0 or keep[-1] >= drive.shape[0]:
        raise ValueError(f"speaker index out of range for {drive.shape[0]} speakers")
    out = np.zeros_like(drive)
    out[keep] = drive[keep]
    return out


def perturb_channels(channels: ChannelSet, rir_snr_db: float, seed: int) -> ChannelSet:
    """Add white Gaussian noise to every RIR at the given per-RIR SNR.

    ``rir_snr_db = inf`` returns the set unchanged.
    """
    if math.isinf(rir_snr_db) and rir_snr_db > 0:
        return channels
    if not math.isfinite(rir_snr_db):
        raise ValueError("rir_snr_db must be finite or +inf")
    rirs = channels.rirs
    p = np.mean(rirs * rirs, axis=2, keepdims=True)
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.standard_normal(rirs.shape) * np.sqrt(p * 10.0 ** (-rir_snr_db / 10))
    return channels.with_rirs(rirs + noise)


# -- export / import -----------------------------------------------------------------

DRIVE_FILE = "drive.wav"
MANIFEST_FILE = "design.json"


@dataclass(frozen=True, eq=False)
class DriveArtifact:
    drive: np.ndarray
    sample_rate_hz: float
    manifest: dict


def _report_dict(r: SolveReport) -> dict:
    return {
        "iterations": r.iterations,
        "relative_residual": r.relative_residual,
        "normal_residual": r.normal_residual,
        "converged": r.converged,
        "tolerance": r.tolerance,
    }


def export_design(design: MccsDesign | NullspaceDesign, directory, channels: ChannelSet,
                  scale_factor: float = 1.0) -> Path:
    """Write ``scale_factor * drive`` as an L-channel float64 WAV plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    drive = np.asarray(design.drive) * scale_factor
    write_wav(directory / DRIVE_FILE, drive, channels.sample_rate_hz, subtype="float64")
    dims = {"L": channels.L, "K": channels.K, "N": channels.N, "L_h": channels.L_h, "L_x": channels.L_x}
    if isinstance(design, MccsDesign):
        dims.update(L_n=design.L_n, L_g=design.L_g)
        meta = {
            "method": "mccs",
            "seed": design.bank.seed,
            "noise_std": design.bank.std,
            "reports": {"filters": _report_dict(design.report)},
        }
    else:
        meta = {
            "method": "nullspace",
            "seed": design.seed,
            "noise_std": design.noise_std,
            "reports": {
                "carrier": _report_dict(design.carrier_report),
                "jam": _report_dict(design.jam_report),
            },
        }
    meta.update(dims=dims, scale_factor=scale_factor, sample_rate_hz=channels.sample_rate_hz)
    (directory / MANIFEST_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def import_design(directory) -> DriveArtifact:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_FILE).read_text())
    data, fs = read_wav(directory / DRIVE_FILE)
    dims = manifest["dims"]
    if data.shape != (dims["L"], dims["L_x"]):
        raise ValueError(f"{DRIVE_FILE} holds {data.shape}, manifest says ({dims['L']}, {dims['L_x']})")
    return DriveArtifact(_readonly(data), fs, manifest)
