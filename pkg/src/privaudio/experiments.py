"""Scenario configuration, result tables and the experiment runners.

Every runner builds a list of independent tasks, evaluates them serially or
on a process pool, and merges the rows by a sort key, so ``results.csv`` is
identical whatever the worker count or completion order.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import platform
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .channel import ChannelSet, check_mccs_condition
from .metrics import align_lag, relative_error, relative_error_optscale, snr_db, stoi
from .room import Point, RoomScene, load_rir_set, simulate_rir_grid
from .signal import ProblemDims
from .solvers import least_norm_carrier
from .speech import load_clip, make_message
from .synthesis import (
    InfeasibleDesign,
    MessageSet,
    design_mccs,
    design_nullspace,
    dropout,
    normalize_power,
    perturb_channels,
    render_field,
)
from . import svgplot

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHODS = ("mccs", "nullspace")
SPEAKER_CLEARANCE = 0.1
RENDER_CHUNK = 48


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


class NonConvergence(RuntimeError):
    """A solve stopped short of its tolerance while running in strict mode."""


# -- configuration -----------------------------------------------------------------


def default_config_text() -> str:
    return (resources.files("privaudio") / "data" / "desk.toml").read_text()


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """A parsed scenario.  ``data`` holds the full, defaults-filled TOML tree."""

    data: dict
    base_dir: Path = field(default=Path("."), compare=False)

    @classmethod
    def default(cls) -> "ScenarioConfig":
        return cls.from_dict({})

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=Path(".")) -> "ScenarioConfig":
        defaults = tomllib.loads(default_config_text())
        unknown = set(raw) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        room = raw.get("room", {})
        if "measured" in room and {"width", "height", "absorption"} & set(room):
            raise ConfigError("give either a simulated room or a measured RIR set, not both")
        cfg = cls(_merge(defaults, raw), Path(base_dir))
        cfg.validate()
        return cfg

    def override(self, **sections) -> "ScenarioConfig":
        """Copy with ``section={key: value}`` overrides applied."""
        cfg = ScenarioConfig(_merge(self.data, sections), self.base_dir)
        cfg.validate()
        return cfg

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return self.override(scenario={"seed": int(seed)})

    def full_scale(self) -> "ScenarioConfig":
        """Full-size heatmap grid (4200 points) and 100 random configurations."""
        return self.override(grid={"nx": 60, "ny": 70}, experiments={"configs": 100})

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    # shorthands
    @property
    def seed(self) -> int:
        return int(self["scenario"]["seed"])

    @property
    def methods(self) -> tuple[str, ...]:
        m = self["scenario"]["method"]
        return METHODS if m == "both" else (m,)

    @property
    def measured_path(self) -> Path | None:
        p = self["room"].get("measured")
        return None if p is None else (self.base_dir / p)

    def scene(self, absorption=None) -> RoomScene:
        r, d = self["room"], self["dims"]
        return RoomScene(
            width=float(r["width"]),
            height=float(r["height"]),
            absorption=r["absorption"] if absorption is None else absorption,
            speed_of_sound=float(r["speed_of_sound"]),
            sample_rate_hz=float(d["fs"]),
            rir_length=int(d["L_h"]),
            max_order=r.get("max_order"),
        )

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def validate(self) -> None:
        d = self.data
        if d["scenario"]["method"] not in METHODS + ("both",):
            raise ConfigError(f"method must be mccs, nullspace or both, got {d['scenario']['method']!r}")
        try:
            dims = ProblemDims(int(d["dims"]["L"]), int(d["dims"]["K"]), int(d["dims"]["N"]), int(d["dims"]["L_h"]))
            if self.measured_path is None:
                self.scene()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.measured_path is not None:
            if not (self.measured_path / "manifest.json").exists():
                raise ConfigError(f"measured RIR set {self.measured_path} has no manifest.json")
        lead, tail = int(d["dims"]["lead_in"]), int(d["dims"]["tail"])
        if lead < 0 or tail < 0 or lead + tail >= dims.N:
            raise ConfigError("lead_in + tail must leave room for speech")
        if len(d["messages"]["clips"]) != dims.K:
            raise ConfigError(f"need {dims.K} message clips, got {len(d['messages']['clips'])}")
        for clip in d["messages"]["clips"]:
            if isinstance(clip, str) and not (self.base_dir / clip).exists():
                raise ConfigError(f"message clip {clip} not found")
        for name in ("speakers", "listeners"):
            pts = d["placement"].get(name)
            want = dims.L if name == "speakers" else dims.K
            if pts is not None and len(pts) != want:
                raise ConfigError(f"{name}: expected {want} positions, got {len(pts)}")
        if self.measured_path is None:
            scene = self.scene()
            for name in ("speakers", "listeners"):
                for p in d["placement"].get(name) or []:
                    if not scene.contains(Point(*p)):
                        raise ConfigError(f"{name} position {p} is outside the room")
        if int(d["grid"]["nx"]) < 1 or int(d["grid"]["ny"]) < 1:
            raise ConfigError("grid needs at least one cell per axis")
        ex = d["experiments"]
        if int(ex["configs"]) < 1:
            raise ConfigError("experiments.configs must be >= 1")
        if not all(s > 0 for s in ex["noise_stds"]):
            raise ConfigError("noise stds must be positive")
        if not all(0 < r <= 1 for r in ex["ratios"]):
            raise ConfigError("noise ratios must lie in (0, 1]")
        if any(int(c) >= dims.L or int(c) < 0 for c in ex["dropouts"]):
            raise ConfigError(f"dropout counts must lie in [0, L-1={dims.L - 1}]")


def derive_seed(*parts: int) -> int:
    """64-bit seed derived from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# -- result table ------------------------------------------------------------------

COLUMNS = (
    "scenario", "config_hash", "experiment", "variant", "method", "config_index", "seed",
    "sweep_param", "sweep_value", "point_kind", "point_index", "x", "y", "target",
    "stoi", "relative_error", "relative_error_optscale", "snr_db", "align_lag",
    "iterations", "relative_residual", "converged", "tolerance",
    "jam_iterations", "jam_relative_residual", "jam_converged",
    "scale_factor", "status",
)
_SORT_KEY = ("experiment", "variant", "method", "config_index", "sweep_param", "sweep_value",
             "point_kind", "point_index")
_KIND_ORDER = {"listener": 0, "extra": 1, "offspot": 2, "grid": 3, "mic": 4, "none": 5}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


@dataclass
class ResultTable:
    rows: list[dict] = field(default_factory=list)

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def sort(self) -> "ResultTable":
        def key(r):
            return tuple(
                (_KIND_ORDER.get(r.get(k), 9) if k == "point_kind" else
                 (-math.inf if r.get(k) is None else r.get(k)) if k in ("sweep_value", "config_index", "point_index")
                 else str(r.get(k) or ""))
                for k in _SORT_KEY
            )
        self.rows.sort(key=key)
        return self

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                extra = set(r) - set(COLUMNS)
                if extra:
                    raise KeyError(f"unexpected result columns {sorted(extra)}")
                w.writerow([_cell(r.get(c)) for c in COLUMNS])
        return path

    @classmethod
    def from_csv(cls, path) -> "ResultTable":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != COLUMNS:
                raise ValueError(f"{path}: unexpected header")
            rows = [{c: _parse(v) for c, v in zip(header, line)} for line in reader]
        hashes = {r["config_hash"] for r in rows}
        if len(hashes) > 1:
            raise ValueError(f"{path}: rows from several configurations {sorted(hashes)}")
        return cls(rows)

    def select(self, **conds) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in conds.items())]

    def median(self, column: str, **conds) -> float:
        vals = [r[column] for r in self.select(**conds) if r.get(column) is not None]
        vals = [v for v in vals if isinstance(v, (int, float)) and math.isfinite(v)]
        return float(np.median(vals)) if vals else math.nan

    def values(self, column: str, **conds) -> list:
        return sorted({r[column] for r in self.select(**conds) if r.get(column) is not None})


# -- scenario instances ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Instance:
    index: int
    scene: RoomScene
    speakers: tuple[Point, ...]
    listeners: tuple[Point, ...]
    channels: ChannelSet
    messages: MessageSet


def _random_points(rng, scene: RoomScene, count: int, margin: float, avoid, clearance: float):
    pts = []
    for _ in range(10000):
        if len(pts) == count:
            return pts
        p = Point(*(float(v) for v in rng.uniform([margin, margin], [scene.width - margin, scene.height - margin])))
        if all(math.dist(p, q) >= clearance for q in list(avoid) + pts):
            pts.append(p)
    raise ConfigError(f"could not place {count} points with {clearance} m clearance")


def placement(cfg: ScenarioConfig, index: int, scene: RoomScene | None = None):
    """Speaker and listener positions for configuration ``index``."""
    scene = scene or cfg.scene()
    pl, d = cfg["placement"], cfg["dims"]
    rng = np.random.Generator(np.random.Philox(derive_seed(cfg.seed, index, 1)))
    margin, sep = float(pl["wall_margin"]), float(pl["min_separation"])
    if pl.get("speakers"):
        spk = [Point(*map(float, p)) for p in pl["speakers"]]
    else:
        spk = _random_points(rng, scene, int(d["L"]), margin, [], sep)
    if pl.get("listeners"):
        lis = [Point(*map(float, p)) for p in pl["listeners"]]
    else:
        lis = _random_points(rng, scene, int(d["K"]), margin, spk, sep)
    return tuple(spk), tuple(lis)


_CLIP_CACHE: dict = {}


def messages_for(cfg: ScenarioConfig) -> MessageSet:
    d, m = cfg["dims"], cfg["messages"]
    key = (tuple(map(str, m["clips"])), int(d["N"]), int(d["lead_in"]), int(d["tail"]), float(m["rms"]),
           float(d["fs"]), str(cfg.base_dir))
    if key not in _CLIP_CACHE:
        rows = []
        for clip in m["clips"]:
            src = clip if isinstance(clip, int) else cfg.base_dir / clip
            rows.append(make_message(load_clip(src, float(d["fs"])), int(d["N"]), int(d["lead_in"]),
                                     float(m["rms"]), int(d["tail"])))
        _CLIP_CACHE[key] = MessageSet(np.stack(rows), float(d["fs"]))
    return _CLIP_CACHE[key]


def build_instance(cfg: ScenarioConfig, index: int = 0, absorption=None) -> Instance:
    scene = cfg.scene(absorption)
    spk, lis = placement(cfg, index, scene)
    rirs = simulate_rir_grid(scene, spk, lis)
    return Instance(index, scene, spk, lis, ChannelSet(rirs, int(cfg["dims"]["N"]), scene.sample_rate_hz),
                    messages_for(cfg))


def offspot_points(cfg: ScenarioConfig, inst: Instance, count: int | None = None, tag: int = 2) -> list[Point]:
    ex = cfg["experiments"]
    count = int(ex["offspot_points"]) if count is None else count
    rng = np.random.Generator(np.random.Philox(derive_seed(cfg.seed, inst.index, tag)))
    clearance = float(ex["offspot_clearance"])
    pts = []
    for _ in range(100000):
        if len(pts) == count:
            return pts
        p = Point(*(float(v) for v in rng.uniform([0.1, 0.1], [inst.scene.width - 0.1, inst.scene.height - 0.1])))
        if (all(math.dist(p, q) >= clearance for q in inst.listeners)
                and all(math.dist(p, q) >= SPEAKER_CLEARANCE for q in inst.speakers)):
            pts.append(p)
    raise ConfigError("could not place off-spot points")


# -- designs and scoring -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DesignResult:
    method: str
    drive: np.ndarray
    scale_factor: float
    diag: dict
    status: str = "ok"


def _solver(cfg, sweep: bool):
    s = cfg["solver"]
    tol = float(s["tol"])
    if sweep:
        return tol, int(s["sweep_max_iter"]), int(s["sweep_max_iter"])
    return tol, int(s["max_iter"]), int(s["mccs_max_iter"])


def noise_length(cfg: ScenarioConfig, L_x: int, ratio: float | None = None) -> int:
    ratio = float(cfg["noise"]["noise_ratio"]) if ratio is None else ratio
    return max(1, math.ceil(ratio * L_x))


def run_design(cfg: ScenarioConfig, inst: Instance, method: str, *, channels: ChannelSet | None = None,
               noise_std: float | None = None, ratio: float | None = None, sweep: bool = False,
               seed_tag: int = 0, normalize: bool = True, strict: bool = False,
               carrier=None) -> DesignResult:
    """Design, then normalize to the configured emitted power."""
    channels = inst.channels if channels is None else channels
    tol, it, mccs_it = _solver(cfg, sweep)
    seed = derive_seed(cfg.seed, inst.index, 10 + seed_tag, METHODS.index(method))
    if method == "mccs":
        std = float(cfg["noise"]["mccs_std"]) if noise_std is None else noise_std
        d = design_mccs(channels, inst.messages, noise_length(cfg, channels.L_x, ratio), std, seed, tol, mccs_it)
        rep = d.report
        diag = dict(iterations=rep.iterations, relative_residual=rep.relative_residual,
                    converged=rep.converged, tolerance=rep.tolerance)
        ok = rep.converged
        drive = d.drive
    else:
        std = float(cfg["noise"]["nullspace_std"]) if noise_std is None else noise_std
        d = design_nullspace(channels, inst.messages, std, seed, tol, it, carrier)
        cr, jr = d.carrier_report, d.jam_report
        diag = dict(iterations=cr.iterations, relative_residual=cr.relative_residual, converged=cr.converged,
                    tolerance=cr.tolerance, jam_iterations=jr.iterations,
                    jam_relative_residual=jr.relative_residual, jam_converged=jr.converged)
        ok = cr.converged and jr.converged
        drive = d.drive
    if strict and not ok:
        raise NonConvergence(f"{method} design for configuration {inst.index} did not converge")
    scale = 1.0
    if normalize and np.any(drive):
        drive, scale = normalize_power(drive, float(cfg["noise"]["target_power"]))
    return DesignResult(method, drive, scale, diag)


def score(message_set: MessageSet, rendered: np.ndarray, scale: float, k: int | None = None) -> dict:
    """Metrics of one received signal.

    With ``k`` given the signal is compared against message ``k`` (scaled by
    the power-normalization factor).  Without it the point is treated as an
    eavesdropper who picks whichever message is most intelligible.
    """
    fs = message_set.sample_rate_hz
    N = message_set.N
    rendered = rendered[:N]
    if k is None:
        scores = [stoi(message_set.messages[j], rendered, fs) for j in range(message_set.K)]
        k = int(np.argmax(scores))
        st = scores[k]
    else:
        st = stoi(message_set.messages[k], rendered, fs)
    ref = scale * message_set.messages[k]
    return dict(target=k, stoi=st, relative_error=relative_error(ref, rendered),
                relative_error_optscale=relative_error_optscale(ref, rendered),
                snr_db=snr_db(ref, rendered), align_lag=align_lag(ref, rendered, max_lag=N // 4))


def render_points(scene: RoomScene, speakers, points, drive) -> np.ndarray:
    out = []
    for i in range(0, len(points), RENDER_CHUNK):
        rirs = simulate_rir_grid(scene, speakers, points[i:i + RENDER_CHUNK])
        out.append(render_field(drive, rirs))
    return np.concatenate(out) if out else np.zeros((0, 0))


def _base_row(cfg: ScenarioConfig, experiment: str, **kw) -> dict:
    row = dict(scenario=cfg["scenario"]["name"], config_hash=cfg.config_hash, experiment=experiment,
               variant="", method="", config_index=0, seed=cfg.seed, sweep_param="", sweep_value=None,
               point_kind="none", point_index=0, status="ok")
    row.update(kw)
    return row


def _point_rows(cfg, experiment, design: DesignResult, inst: Instance, rendered, kinds, points, ks, **kw):
    rows = []
    for j, (kind, p, k) in enumerate(zip(kinds, points, ks)):
        r = _base_row(cfg, experiment, method=design.method, config_index=inst.index, point_kind=kind,
                      point_index=j if kind != "listener" else k, x=p.x, y=p.y,
                      scale_factor=design.scale_factor, **kw)
        r.update(design.diag)
        r.update(score(inst.messages, rendered[j], design.scale_factor, k))
        rows.append(r)
    return rows


# -- parallel map ------------------------------------------------------------------


def _run_tasks(fn, tasks, workers: int) -> ResultTable:
    table = ResultTable()
    if workers <= 1 or len(tasks) <= 1:
        for t in tasks:
            table.extend(fn(*t))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rows in pool.map(fn, *zip(*tasks)):
                table.extend(rows)
    return table.sort()


# -- experiments -------------------------------------------------------------------


def _demo_task(cfg: ScenarioConfig, variant: str, absorption: float, index: int, strict: bool):
    inst = build_instance(cfg, index, absorption)
    extra = offspot_points(cfg.override(experiments={"offspot_clearance": cfg["experiments"]["extra_clearance"]}),
                           inst, 1, tag=3)
    points = list(inst.listeners) + extra
    kinds = ["listener"] * len(inst.listeners) + ["extra"]
    ks = list(range(inst.channels.K)) + [None]
    rows = []
    for method in cfg.methods:
        try:
            d = run_design(cfg, inst, method, sweep=True, strict=strict)
        except InfeasibleDesign as exc:
            rows.append(_base_row(cfg, "demo", variant=variant, method=method, config_index=index,
                                  status=f"infeasible: {exc}"))
            continue
        rendered = render_points(inst.scene, inst.speakers, points, d.drive)
        rows += _point_rows(cfg, "demo", d, inst, rendered, kinds, points, ks, variant=variant)
    return rows


def run_reconstruction_demo(cfg: ScenarioConfig, workers: int = 1, strict: bool = False) -> ResultTable:
    """Reverberant vs anechoic room, both methods, listeners plus one extra point."""
    variants = (("reverberant", cfg["room"]["absorption"]), ("anechoic", 1.0))
    tasks = [(cfg, v, a, i, strict) for v, a in variants for i in range(int(cfg["experiments"]["configs"]))]
    return _run_tasks(_demo_task, tasks, workers)


def heatmap_grid(cfg: ScenarioConfig, inst: Instance):
    """Cell centers, with the cells holding a listener sampled at the listener itself."""
    nx, ny = int(cfg["grid"]["nx"]), int(cfg["grid"]["ny"])
    W, H = inst.scene.width, inst.scene.height
    xs = (np.arange(nx) + 0.5) * W / nx
    ys = (np.arange(ny) + 0.5) * H / ny
    cells = []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            kind, p, k = "grid", Point(float(x), float(y)), None
            for kk, q in enumerate(inst.listeners):
                if min(int(q.x * nx / W), nx - 1) == i and min(int(q.y * ny / H), ny - 1) == j:
                    kind, p, k = "listener", q, kk
            if kind == "grid" and any(math.dist(p, s) < SPEAKER_CLEARANCE for s in inst.speakers):
                warnings.warn(f"grid cell ({i}, {j}) sits on a speaker; skipped")
                continue
            cells.append((j * nx + i, kind, p, k))
    return xs, ys, cells


def _heatmap_task(cfg: ScenarioConfig, method: str, strict: bool):
    inst = build_instance(cfg, 0)
    d = run_design(cfg, inst, method, strict=strict)
    _, _, cells = heatmap_grid(cfg, inst)
    pts = [c[2] for c in cells]
    rendered = render_points(inst.scene, inst.speakers, pts, d.drive)
    rows = []
    for (cell, kind, p, k), sig in zip(cells, rendered):
        r = _base_row(cfg, "heatmap", method=method, point_kind="grid", point_index=cell, x=p.x, y=p.y,
                      variant="listener" if kind == "listener" else "", scale_factor=d.scale_factor)
        r.update(d.diag)
        r.update(score(inst.messages, sig, d.scale_factor, k))
        rows.append(r)
    return rows


def run_heatmap(cfg: ScenarioConfig, workers: int = 1, strict: bool = False) -> ResultTable:
    """STOI over an ``nx`` x ``ny`` grid for every configured method (configuration 0)."""
    return _run_tasks(_heatmap_task, [(cfg, m, strict) for m in cfg.methods], workers)


def _variance_task(cfg: ScenarioConfig, index: int, strict: bool):
    inst = build_instance(cfg, index)
    pts = list(inst.listeners) + offspot_points(cfg, inst)
    kinds = ["listener"] * inst.channels.K + ["offspot"] * (len(pts) - inst.channels.K)
    ks = list(range(inst.channels.K)) + [None] * (len(pts) - inst.channels.K)
    carrier = None
    if "nullspace" in cfg.methods:
        tol, it, _ = _solver(cfg, True)
        carrier = least_norm_carrier(inst.channels, inst.messages.stacked, tol, it)
    rows = []
    for std in cfg["experiments"]["noise_stds"]:
        for method in cfg.methods:
            d = run_design(cfg, inst, method, noise_std=float(std), sweep=True, strict=strict,
                           carrier=carrier if method == "nullspace" else None)
            rendered = render_points(inst.scene, inst.speakers, pts, d.drive)
            rows += _point_rows(cfg, "sweep-variance", d, inst, rendered, kinds, pts, ks,
                                sweep_param="noise_std", sweep_value=float(std))
    return rows


def run_noise_variance_sweep(cfg: ScenarioConfig, workers: int = 1, strict: bool = False) -> ResultTable:
    """Off-spot and listener STOI versus the noise standard deviation."""
    n = int(cfg["experiments"]["configs"])
    return _run_tasks(_variance_task, [(cfg, i, strict) for i in range(n)], workers)


def feasible_ratio_bound(dims: ProblemDims) -> float:
    """Largest ``L_n / L_x`` with ``L * L_g >= N * K``."""
    L_g_min = math.ceil(dims.N * dims.K / dims.L)
    return (dims.L_x - L_g_min + 1) / dims.L_x


def _length_task(cfg: ScenarioConfig, index: int, strict: bool):
    inst = build_instance(cfg, index)
    pts = list(inst.listeners) + offspot_points(cfg, inst)
    kinds = ["listener"] * inst.channels.K + ["offspot"] * (len(pts) - inst.channels.K)
    ks = list(range(inst.channels.K)) + [None] * (len(pts) - inst.channels.K)
    rows = []
    for ratio in cfg["experiments"]["ratios"]:
        L_n = noise_length(cfg, inst.channels.L_x, float(ratio))
        dims = ProblemDims(inst.channels.L, inst.channels.K, inst.channels.N, inst.channels.L_h, L_n=L_n)
        check = check_mccs_condition(dims)
        if not check.passed:
            rows.append(_base_row(cfg, "sweep-length", method="mccs", config_index=index,
                                  sweep_param="noise_ratio", sweep_value=float(ratio),
                                  status=f"infeasible: L*L_g - N*K = {check.margin}"))
            continue
        d = run_design(cfg, inst, "mccs", ratio=float(ratio), sweep=True, strict=strict)
        rendered = render_points(inst.scene, inst.speakers, pts, d.drive)
        rows += _point_rows(cfg, "sweep-length", d, inst, rendered, kinds, pts, ks,
                            sweep_param="noise_ratio", sweep_value=float(ratio))
    return rows


def run_noise_length_sweep(cfg: ScenarioConfig, workers: int = 1, strict: bool = False) -> ResultTable:
    """MCCS off-spot STOI versus ``L_n / L_x``; infeasible ratios are reported, not run."""
    n = int(cfg["experiments"]["configs"])
    return _run_tasks(_length_task, [(cfg, i, strict) for i in range(n)], workers)


def _robustness_task(cfg: ScenarioConfig, index: int, strict: bool):
    inst = build_instance(cfg, index)
    L, K = inst.channels.L, inst.channels.K
    rng = np.random.Generator(np.random.Philox(derive_seed(cfg.seed, index, 4)))
    order = rng.permutation(L)
    kinds, ks = ["listener"] * K, list(range(K))
    rows = []
    for method in cfg.methods:
        d = run_design(cfg, inst, method, sweep=True, strict=strict)
        for count in cfg["experiments"]["dropouts"]:
            drive = dropout(d.drive, order[int(count):])
            rendered = render_field(drive, inst.channels.rirs)
            rows += _point_rows(cfg, "robustness", d, inst, rendered, kinds, inst.listeners, ks,
                                variant="dropout", sweep_param="dropped", sweep_value=int(count))
        for snr in cfg["experiments"]["rir_snrs"]:
            noisy = perturb_channels(inst.channels, float(snr), derive_seed(cfg.seed, index, 5, int(snr * 1000)))
            dn = run_design(cfg, inst, method, channels=noisy, sweep=True, strict=strict)
            rendered = render_field(dn.drive, inst.channels.rirs)
            rows += _point_rows(cfg, "robustness", dn, inst, rendered, kinds, inst.listeners, ks,
                                variant="rir_noise", sweep_param="rir_snr_db", sweep_value=float(snr))
    return rows


def run_robustness(cfg: ScenarioConfig, workers: int = 1, strict: bool = False) -> ResultTable:
    """Listener STOI under speaker dropout and under noisy RIR estimates."""
    n = int(cfg["experiments"]["configs"])
    return _run_tasks(_robustness_task, [(cfg, i, strict) for i in range(n)], workers)


def _measured_task(cfg: ScenarioConfig, strict: bool):
    rirs, manifest = load_rir_set(cfg.measured_path)
    focus = [int(i) for i in cfg["measured"]["focus"]]
    mics = [Point(*p) for p in manifest.listeners]
    speakers = tuple(Point(*p) for p in manifest.speakers)
    if len(speakers) != int(cfg["dims"]["L"]) or manifest.rir_length != int(cfg["dims"]["L_h"]):
        raise ConfigError("measured RIR set does not match dims.L / dims.L_h")
    if any(i < 0 or i >= len(mics) for i in focus) or len(focus) != int(cfg["dims"]["K"]):
        raise ConfigError(f"focus must name {cfg['dims']['K']} of the {len(mics)} microphones")
    channels = ChannelSet(rirs[focus], int(cfg["dims"]["N"]), manifest.sample_rate_hz)
    inst = Instance(0, cfg.scene(), speakers, tuple(mics[i] for i in focus), channels, messages_for(cfg))
    rows = []
    for method in cfg.methods:
        d = run_design(cfg, inst, method, strict=strict)
        rendered = render_field(d.drive, rirs)
        for m, (p, sig) in enumerate(zip(mics, rendered)):
            k = focus.index(m) if m in focus else None
            dist = min(math.dist(p, mics[i]) for i in focus)
            r = _base_row(cfg, "measured", method=method, point_kind="listener" if k is not None else "mic",
                          point_index=m, x=p.x, y=p.y, sweep_param="distance_m", sweep_value=dist,
                          scale_factor=d.scale_factor)
            r.update(d.diag)
            r.update(score(inst.messages, sig, d.scale_factor, k))
            rows.append(r)
    return rows


def run_measured(cfg: ScenarioConfig, workers: int = 1, strict: bool = False) -> ResultTable:
    """Design on a measured RIR set and score every microphone by distance to a focusing spot."""
    if cfg.measured_path is None:
        raise ConfigError("room.measured is not set")
    return _run_tasks(_measured_task, [(cfg, strict)], workers)


EXPERIMENTS = {
    "demo": run_reconstruction_demo,
    "heatmap": run_heatmap,
    "sweep-variance": run_noise_variance_sweep,
    "sweep-length": run_noise_length_sweep,
    "robustness": run_robustness,
    "measured": run_measured,
}


# -- outputs -----------------------------------------------------------------------


def write_manifest(cfg: ScenarioConfig, out_dir, experiment: str) -> Path:
    """Record the config hash, seed and versions; refuse to mix configurations."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    if path.exists():
        old = json.loads(path.read_text())
        if old.get("config_hash") != cfg.config_hash:
            raise ConfigError(
                f"{out_dir} holds results of config {old.get('config_hash')}, not {cfg.config_hash}"
            )
        experiments = sorted(set(old.get("experiments", [])) | {experiment})
    else:
        experiments = [experiment]
    meta = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "experiments": experiments,
        "config": cfg.data,
        "versions": {
            "privaudio": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    return path


def run_experiment(name: str, cfg: ScenarioConfig, out_dir=None, workers: int = 1,
                   strict: bool = False) -> tuple[ResultTable, Path]:
    """Run one experiment and write ``results.csv``, ``manifest.json`` and its SVGs."""
    out_dir = Path(out_dir or cfg["output"]["dir"]) / name
    write_manifest(cfg, out_dir, name)
    table = EXPERIMENTS[name](cfg, workers=workers, strict=strict)
    csv_path = table.to_csv(out_dir / "results.csv")
    plot_results(name, csv_path, cfg)
    return table, csv_path


def plot_results(name: str, csv_path, cfg: ScenarioConfig | None = None) -> list[Path]:
    """Regenerate the SVG figures of an experiment from its CSV alone (``cfg`` adds markers)."""
    csv_path = Path(csv_path)
    table = ResultTable.from_csv(csv_path)
    out = []

    def save(fname, text):
        p = csv_path.parent / fname
        p.write_text(text)
        out.append(p)

    if name == "heatmap":
        room = (7.0, 8.0) if cfg is None else (cfg.scene().width, cfg.scene().height)
        nx = ny = None
        if cfg is not None:
            nx, ny = int(cfg["grid"]["nx"]), int(cfg["grid"]["ny"])
        for method in table.values("method", experiment="heatmap"):
            rows = table.select(method=method)
            if nx is None:
                nx = len({round(r["x"], 6) for r in rows if r["variant"] != "listener"})
                ny = max(r["point_index"] for r in rows) // nx + 1
            grid = np.full((ny, nx), np.nan)
            for r in rows:
                grid[r["point_index"] // nx, r["point_index"] % nx] = r["stoi"]
            xs = (np.arange(nx) + 0.5) * room[0] / nx
            ys = (np.arange(ny) + 0.5) * room[1] / ny
            listeners = [(r["x"], r["y"]) for r in rows if r["variant"] == "listener"]
            speakers = []
            if cfg is not None:
                speakers = list(placement(cfg, 0)[0])
            save(f"heatmap_{method}.svg", svgplot.heatmap(xs, ys, grid, f"STOI heatmap ({method})", room,
                                                          speakers, listeners))
    elif name in ("sweep-variance", "sweep-length"):
        param = "noise_std" if name == "sweep-variance" else "noise_ratio"
        series = {}
        for method in table.values("method", experiment=name):
            xs = table.values("sweep_value", method=method, point_kind="offspot")
            series[f"{method} off-spot"] = (xs, [table.median("stoi", method=method, point_kind="offspot",
                                                              sweep_value=x) for x in xs])
            series[f"{method} listener"] = (xs, [table.median("stoi", method=method, point_kind="listener",
                                                              sweep_value=x) for x in xs])
        save(f"{name}.svg", svgplot.line_plot(series, "Median STOI", param, "STOI",
                                              xlog=(param == "noise_std"), ylim=(0.0, 1.05)))
    elif name == "robustness":
        for variant, param in (("dropout", "speakers dropped"), ("rir_noise", "RIR SNR (dB)")):
            series = {}
            for method in table.values("method", variant=variant):
                xs = table.values("sweep_value", method=method, variant=variant)
                series[method] = (xs, [table.median("stoi", method=method, variant=variant, sweep_value=x)
                                       for x in xs])
            if series:
                save(f"robustness_{variant}.svg", svgplot.line_plot(series, "Median listener STOI", param,
                                                                    "STOI", ylim=(0.0, 1.05)))
    elif name == "demo":
        groups, series = [], {}
        for variant in ("anechoic", "reverberant"):
            for kind, label in (("listener", "L1"), ("listener", "L2"), ("extra", "extra")):
                groups.append(f"{variant[:4]} {label}")
        for method in table.values("method", experiment="demo"):
            vals = []
            for variant in ("anechoic", "reverberant"):
                for k in (0, 1):
                    vals.append(table.median("stoi", method=method, variant=variant, point_kind="listener",
                                             target=k))
                vals.append(table.median("stoi", method=method, variant=variant, point_kind="extra"))
            series[method] = vals
        save("demo.svg", svgplot.bar_plot(groups, series, "Median STOI", "STOI"))
    elif name == "measured":
        series = {}
        for method in table.values("method", experiment="measured"):
            rows = sorted(table.select(method=method), key=lambda r: r["sweep_value"])
            series[method] = ([r["sweep_value"] for r in rows], [r["stoi"] for r in rows])
        save("measured.svg", svgplot.line_plot(series, "STOI by distance from a focusing spot",
                                               "distance (m)", "STOI", ylim=(0.0, 1.05)))
    return out
