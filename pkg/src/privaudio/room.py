"""Room impulse responses: 2-D image-source simulation and sweep measurement.

Rooms are axis-aligned rectangles ``[0, width] x [0, height]``.  Every image
source contributes a windowed-sinc pulse with amplitude
``prod(1 - absorption_wall) / distance`` at delay ``distance / c``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.fft

from .signal import DEFAULT_FS, Signal, next_pow2, read_wav, write_wav

# Fractional-delay kernel: 81 taps, Hann-windowed sinc.
KERNEL_TAPS = 81
_HALF = KERNEL_TAPS // 2

# Wall order used for per-wall absorption: x=0, x=width, y=0, y=height.
WALLS = ("west", "east", "south", "north")


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class RoomScene:
    """Rectangular room with uniform or per-wall absorption.

    ``absorption`` is either one coefficient applied to all walls or four
    values in ``WALLS`` order.  ``max_order=None`` picks the smallest order
    that captures every image arriving inside the RIR window.
    """

    width: float = 7.0
    height: float = 8.0
    absorption: float | tuple[float, float, float, float] = 0.35
    speed_of_sound: float = 343.0
    sample_rate_hz: float = DEFAULT_FS
    rir_length: int = 2000
    max_order: int | None = None

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("room dimensions must be positive")
        if self.speed_of_sound <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("speed of sound and sample rate must be positive")
        if self.rir_length < 1:
            raise ValueError("rir_length must be >= 1")
        alpha = np.broadcast_to(np.asarray(self.absorption, dtype=float), (4,))
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise ValueError(f"absorption must lie in [0, 1], got {self.absorption}")
        if self.max_order is not None and self.max_order < 0:
            raise ValueError("max_order must be nonnegative")

    @property
    def wall_absorption(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.absorption, dtype=float), (4,)).copy()

    @property
    def order(self) -> int:
        return self.max_order if self.max_order is not None else default_max_order(self)

    def contains(self, p: Point) -> bool:
        return 0 < p.x < self.width and 0 < p.y < self.height

    def check_inside(self, *points: Point) -> None:
        for p in points:
            if not (math.isfinite(p.x) and math.isfinite(p.y)) or not self.contains(Point(*p)):
                raise ValueError(
                    f"point {tuple(p)} is not strictly inside the "
                    f"{self.width} x {self.height} m room"
                )

    def with_absorption(self, absorption) -> "RoomScene":
        return RoomScene(
            self.width, self.height, absorption, self.speed_of_sound,
            self.sample_rate_hz, self.rir_length, self.max_order,
        )


def default_max_order(scene: RoomScene) -> int:
    """Smallest order M such that no image of order > M reaches the RIR window.

    An image with ``c`` reflections along one axis is at least ``(c - 1)``
    room lengths away on that axis; the bound is minimised over all splits
    of ``M + 1`` reflections between the two axes.
    """
    reach = (scene.rir_length + _HALF) * scene.speed_of_sound / scene.sample_rate_hz
    W, H = scene.width, scene.height
    order = 0
    while True:
        nxt = order + 1
        nearest = min(
            math.hypot(max(cx - 1, 0) * W, max(nxt - cx - 1, 0) * H)
            for cx in range(nxt + 1)
        )
        if nearest > reach:
            return order
        order = nxt


def _axis_images(src: float, other: float, length: float, order: int):
    """1-D image offsets along one axis, relative to the receiver coordinate.

    Returns ``(offset, hits_low_wall, hits_high_wall)``.  Offsets for the
    mirrored family are formed as ``2mL - (src + rcv)`` so the result is
    symmetric under swapping source and receiver.
    """
    m = np.arange(-order, order + 1)
    direct = 2 * m * length + (src - other)
    mirrored = 2 * m * length - (src + other)
    offsets = np.concatenate([direct, mirrored])
    low = np.concatenate([np.abs(m), np.abs(m - 1)])
    high = np.concatenate([np.abs(m), np.abs(m)])
    keep = low + high <= order
    return offsets[keep], low[keep], high[keep]


def _image_table(scene: RoomScene, src: Point, rcv: Point, order: int):
    """All image offsets (relative to ``rcv``) and per-wall hit counts."""
    ox, xl, xh = _axis_images(src.x, rcv.x, scene.width, order)
    oy, yl, yh = _axis_images(src.y, rcv.y, scene.height, order)
    dx = np.repeat(ox, oy.size)
    dy = np.tile(oy, ox.size)
    hits = np.stack(
        [np.repeat(xl, oy.size), np.repeat(xh, oy.size), np.tile(yl, ox.size), np.tile(yh, ox.size)],
        axis=1,
    )
    keep = hits.sum(axis=1) <= order
    return dx[keep], dy[keep], hits[keep]


def image_sources(scene: RoomScene, src: Point, order: int) -> list[tuple[Point, int]]:
    """Image positions of ``src`` up to ``order`` reflections, with their counts."""
    src = Point(*src)
    scene.check_inside(src)
    if order < 0:
        raise ValueError("order must be nonnegative")
    origin = Point(0.0, 0.0)
    dx, dy, hits = _image_table(scene, src, origin, order)
    seen: dict[tuple[float, float], int] = {}
    for x, y, c in zip(dx, dy, hits.sum(axis=1)):
        key = (float(x), float(y))
        seen.setdefault(key, int(c))
    return [(Point(*k), c) for k, c in sorted(seen.items(), key=lambda kv: (kv[1], kv[0]))]


def fractional_delay_kernel(delay: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and weights of Hann-windowed sinc pulses at ``delay`` samples.

    Returns arrays of shape ``(len(delay), KERNEL_TAPS)``.
    """
    delay = np.asarray(delay, dtype=float)
    centre = np.round(delay).astype(np.int64)
    idx = centre[:, None] + np.arange(-_HALF, _HALF + 1)[None, :]
    t = idx - delay[:, None]
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * t / KERNEL_TAPS))
    window[np.abs(t) > KERNEL_TAPS / 2] = 0.0
    return idx, np.sinc(t) * window


def simulate_rir(scene: RoomScene, src: Point, rcv: Point, order: int | None = None) -> Signal:
    """Image-source RIR between two points, ``scene.rir_length`` taps long."""
    src, rcv = Point(*src), Point(*rcv)
    scene.check_inside(src, rcv)
    if src == rcv:
        raise ValueError("source and receiver coincide; the 1/distance law is singular")
    fs, c = scene.sample_rate_hz, scene.speed_of_sound
    direct = math.hypot(src.x - rcv.x, src.y - rcv.y) * fs / c
    if direct >= scene.rir_length:
        raise ValueError(
            f"direct-path delay {direct:.1f} samples does not fit in "
            f"rir_length={scene.rir_length}"
        )
    order = scene.order if order is None else order
    dx, dy, hits = _image_table(scene, src, rcv, order)
    dist = np.hypot(dx, dy)
    reflect = 1.0 - scene.wall_absorption
    with np.errstate(divide="ignore"):
        gain = np.prod(np.where(hits > 0, reflect[None, :] ** hits, 1.0), axis=1) / dist
    delay = dist * fs / c
    keep = (gain != 0) & (delay < scene.rir_length + _HALF)
    dist, gain, delay = dist[keep], gain[keep], delay[keep]
    # Canonical accumulation order makes the result exactly reciprocal.
    order_idx = np.lexsort((gain, dist))
    idx, w = fractional_delay_kernel(delay[order_idx])
    w = w * gain[order_idx, None]
    valid = (idx >= 0) & (idx < scene.rir_length)
    h = np.zeros(scene.rir_length)
    np.add.at(h, idx[valid], w[valid])
    return Signal(h, fs)


def simulate_rir_grid(scene: RoomScene, speakers: Sequence[Point], listeners: Sequence[Point]) -> np.ndarray:
    """RIRs for every (listener, speaker) pair, shape ``(K, L, rir_length)``."""
    out = np.zeros((len(listeners), len(speakers), scene.rir_length))
    for k, rcv in enumerate(listeners):
        for i, src in enumerate(speakers):
            out[k, i] = simulate_rir(scene, src, rcv).samples
    return out


# -- exponential sine sweep -------------------------------------------------


def generate_ess(f1: float, f2: float, duration: float, fs: float = DEFAULT_FS) -> Signal:
    """Exponential sine sweep from ``f1`` to ``f2`` Hz."""
    if not (0 < f1 < f2 < fs / 2):
        raise ValueError(f"need 0 < f1 < f2 < fs/2, got f1={f1}, f2={f2}, fs={fs}")
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    rate = math.log(f2 / f1)
    phase = 2 * math.pi * f1 * duration / rate * (np.exp(t * rate / duration) - 1.0)
    return Signal(np.sin(phase), fs)


def inverse_sweep_spectrum(sweep: Signal, nfft: int, regularization: float = 1e-10) -> np.ndarray:
    """Spectrum of the amplitude-compensated time-reversed sweep.

    Time reversal is the conjugate spectrum; amplitude compensation divides
    by the sweep's power spectrum (regularised relative to its peak).
    """
    S = scipy.fft.rfft(sweep.samples, nfft)
    mag2 = np.abs(S) ** 2
    return np.conj(S) / (mag2 + regularization * mag2.max())


class Deconvolution(NamedTuple):
    rir: Signal
    delay: int


def deconvolve_rir(recording: Signal, sweep: Signal, rir_length: int, align: str = "peak") -> Deconvolution:
    """Recover an impulse response from a sweep recording.

    With ``align="peak"`` the response is cropped starting at its largest
    tap and the dropped lead is returned as ``delay``; ``align="zero"``
    keeps the causal response from lag 0 (``delay == 0``), which preserves
    relative arrival times across several recordings.
    """
    if recording.sample_rate_hz != sweep.sample_rate_hz:
        raise ValueError("recording and sweep sample rates differ")
    if len(recording) < len(sweep):
        raise ValueError("recording is shorter than the sweep")
    if not np.any(recording.samples):
        raise ValueError("recording is silent")
    nfft = next_pow2(len(recording) + len(sweep))
    inv = inverse_sweep_spectrum(sweep, nfft)
    h = scipy.fft.irfft(scipy.fft.rfft(recording.samples, nfft) * inv, nfft)
    causal = h[: len(recording)]
    if align == "peak":
        delay = int(np.argmax(np.abs(causal)))
    elif align == "zero":
        delay = 0
    else:
        raise ValueError(f"unknown alignment {align!r}")
    out = causal[delay: delay + rir_length]
    out = np.pad(out, (0, rir_length - out.size))
    return Deconvolution(Signal(out, recording.sample_rate_hz), delay)


# -- RIR set files ------------------------------------------------------------


@dataclass
class RirManifest:
    sample_rate_hz: float
    rir_length: int
    speakers: list[list[float]]
    listeners: list[list[float]]
    files: list[str] = field(default_factory=list)
    room: dict | None = None


def save_rir_set(directory, rirs: np.ndarray, fs: float, speakers, listeners, room: RoomScene | None = None) -> Path:
    """Write one multichannel WAV per listener (one channel per speaker) plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    K = rirs.shape[0]
    files = []
    for k in range(K):
        name = f"listener_{k:03d}.wav"
        write_wav(directory / name, rirs[k], fs, subtype="float64")
        files.append(name)
    manifest = RirManifest(
        sample_rate_hz=float(fs),
        rir_length=int(rirs.shape[2]),
        speakers=[list(map(float, p)) for p in speakers],
        listeners=[list(map(float, p)) for p in listeners],
        files=files,
        room=asdict(room) if room is not None else None,
    )
    path = directory / "manifest.json"
    path.write_text(json.dumps(asdict(manifest), indent=2))
    return path


def load_rir_set(directory) -> tuple[np.ndarray, RirManifest]:
    """Inverse of :func:`save_rir_set`; returns ``(rirs[K, L, L_h], manifest)``."""
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text())
    manifest = RirManifest(**meta)
    blocks = []
    for name in manifest.files:
        path = directory / name
        if not path.exists():
            raise FileNotFoundError(f"missing RIR file {path}")
        data, fs = read_wav(path)
        if fs != manifest.sample_rate_hz:
            raise ValueError(f"{name}: sample rate {fs} != manifest {manifest.sample_rate_hz}")
        if data.shape[0] != len(manifest.speakers):
            raise ValueError(f"{name}: {data.shape[0]} channels, expected {len(manifest.speakers)}")
        if data.shape[1] < manifest.rir_length:
            raise ValueError(f"{name}: {data.shape[1]} taps, shorter than {manifest.rir_length}")
        blocks.append(data[:, : manifest.rir_length])
    return np.stack(blocks), manifest


def ingest_sweep_recordings(directory, sweep_path, rir_length: int) -> np.ndarray:
    """Deconvolve ``listener_XXX.wav`` sweep recordings (one channel per speaker).

    Uses zero-lag alignment so speaker-to-speaker delays survive.
    """
    sweep = Signal(*_first_channel(sweep_path))
    directory = Path(directory)
    files = sorted(directory.glob("listener_*.wav"))
    if not files:
        raise FileNotFoundError(f"no listener_*.wav recordings in {directory}")
    out = []
    for path in files:
        data, fs = read_wav(path)
        row = []
        for ch in data:
            rec = Signal(ch, fs)
            try:
                row.append(deconvolve_rir(rec, sweep, rir_length, align="zero").rir.samples)
            except ValueError as exc:
                raise ValueError(f"{path.name}: {exc}") from exc
        out.append(row)
    return np.asarray(out)


def _first_channel(path):
    data, fs = read_wav(path)
    return data[0], fs
