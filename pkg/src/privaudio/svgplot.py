"""Minimal static SVG figures: heatmaps, line plots and grouped bars.

Only what the experiment reports need; no external plotting dependency.
"""

from __future__ import annotations

import math
from html import escape

import numpy as np

# Monotone-luminance ramp (dark blue -> teal -> yellow), sampled at 9 stops.
_RAMP = np.array([
    [0.050, 0.030, 0.250],
    [0.180, 0.080, 0.450],
    [0.200, 0.220, 0.560],
    [0.130, 0.380, 0.560],
    [0.100, 0.520, 0.540],
    [0.160, 0.650, 0.470],
    [0.400, 0.760, 0.330],
    [0.700, 0.840, 0.200],
    [0.990, 0.910, 0.150],
])
PALETTE = ["#1f5fa8", "#c4521c", "#2c8a3d", "#7a3ea1", "#8c6d1f", "#3b3b3b"]

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=110, top=40, bottom=60)


def luminance(rgb) -> float:
    r, g, b = rgb
    return 0.2126 * r + 0.7152 * g + 0.0722 * b


def colormap(t: float) -> str:
    """Hex color for ``t`` in [0, 1]."""
    t = min(max(float(t), 0.0), 1.0) if math.isfinite(t) else 0.0
    pos = t * (len(_RAMP) - 1)
    i = min(int(pos), len(_RAMP) - 2)
    c = _RAMP[i] + (pos - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#" + "".join(f"{int(round(255 * v)):02x}" for v in c)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, title: str, width: int = WIDTH, height: int = HEIGHT):
        self.w, self.h = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        ]
        self.x0, self.x1 = MARGIN["left"], width - MARGIN["right"]
        self.y0, self.y1 = height - MARGIN["bottom"], MARGIN["top"]

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, anchor="middle", **attrs):
        extra = "".join(f' {k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        self.add(f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>')

    def axes(self, xlim, ylim, xlabel, ylabel, xticks, yticks, xlog=False):
        self.xlim, self.ylim, self.xlog = xlim, ylim, xlog
        self.add(f'<rect x="{self.x0}" y="{self.y1}" width="{self.x1 - self.x0}" '
                 f'height="{self.y0 - self.y1}" fill="none" stroke="black"/>')
        for t in xticks:
            px = self.px(t)
            self.add(f'<line x1="{px:.1f}" y1="{self.y0}" x2="{px:.1f}" y2="{self.y0 + 5}" stroke="black"/>')
            self.text(px, self.y0 + 18, _fmt(t))
        for t in yticks:
            py = self.py(t)
            self.add(f'<line x1="{self.x0 - 5}" y1="{py:.1f}" x2="{self.x0}" y2="{py:.1f}" stroke="black"/>')
            self.text(self.x0 - 8, py + 4, _fmt(t), anchor="end")
        self.text((self.x0 + self.x1) / 2, self.h - 18, xlabel)
        yc = (self.y0 + self.y1) / 2
        self.text(18, yc, ylabel, transform=f"rotate(-90 18 {yc:.1f})")

    def px(self, x):
        lo, hi = self.xlim
        if self.xlog:
            x, lo, hi = math.log10(x), math.log10(lo), math.log10(hi)
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 - (y - lo) / (hi - lo) * (self.y0 - self.y1)

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [float(v) for v in np.linspace(lo, hi, n)]


def heatmap(xs, ys, values, title: str, room: tuple[float, float], speakers=(), listeners=(),
            vmin: float = 0.0, vmax: float = 1.0, label: str = "STOI") -> str:
    """Colored cells at grid centers ``xs`` x ``ys`` (``values`` is ``(len(ys), len(xs))``)."""
    xs, ys, values = np.asarray(xs, float), np.asarray(ys, float), np.asarray(values, float)
    c = _Canvas(title)
    width, height = room
    c.axes((0.0, width), (0.0, height), "x (m)", "y (m)", _ticks(0, width), _ticks(0, height))
    dx = np.diff(xs).min() if xs.size > 1 else width
    dy = np.diff(ys).min() if ys.size > 1 else height
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            v = values[j, i]
            if not math.isfinite(v):
                continue
            x0, x1 = c.px(x - dx / 2), c.px(x + dx / 2)
            y0, y1 = c.py(y + dy / 2), c.py(y - dy / 2)
            c.add(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0 + 0.3:.2f}" height="{y1 - y0 + 0.3:.2f}" '
                  f'fill="{colormap((v - vmin) / (vmax - vmin))}"/>')
    for i, (x, y) in enumerate(speakers):
        c.add(f'<rect x="{c.px(x) - 5:.1f}" y="{c.py(y) - 5:.1f}" width="10" height="10" '
              f'fill="white" stroke="black"/>')
        c.text(c.px(x), c.py(y) - 8, f"S{i + 1}", font_size=10)
    for k, (x, y) in enumerate(listeners):
        c.add(f'<circle cx="{c.px(x):.1f}" cy="{c.py(y):.1f}" r="6" fill="none" stroke="red" stroke-width="2"/>')
        c.text(c.px(x), c.py(y) - 9, f"L{k + 1}", font_size=10, fill="red")
    # color bar
    bx, steps = c.x1 + 25, 50
    span = c.y0 - c.y1
    for s in range(steps):
        y = c.y0 - (s + 1) * span / steps
        c.add(f'<rect x="{bx}" y="{y:.2f}" width="18" height="{span / steps + 0.3:.2f}" '
              f'fill="{colormap((s + 0.5) / steps)}"/>')
    for t in _ticks(vmin, vmax):
        c.text(bx + 24, c.y0 - (t - vmin) / (vmax - vmin) * span + 4, _fmt(t), anchor="start")
    c.text(bx + 9, c.y1 - 8, label)
    return c.render()


def line_plot(series: dict, title: str, xlabel: str, ylabel: str, xlog: bool = False,
              ylim: tuple[float, float] | None = None) -> str:
    """One polyline with markers per ``name -> (x, y)`` entry."""
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ys = ys[np.isfinite(ys)]
    if ylim is None:
        lo, hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
        pad = 0.05 * (hi - lo) or 0.05
        ylim = (lo - pad, hi + pad)
    xlim = (float(xs.min()), float(xs.max()))
    if xlim[0] == xlim[1]:
        xlim = (xlim[0] / 2, xlim[0] * 2) if xlog else (xlim[0] - 1, xlim[0] + 1)
    c = _Canvas(title)
    if xlog:
        xticks = sorted(set(float(v) for v in xs))
    else:
        xticks = _ticks(*xlim)
    c.axes(xlim, ylim, xlabel, ylabel, xticks, _ticks(*ylim), xlog=xlog)
    for n, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        pts = [(c.px(a), c.py(b)) for a, b in zip(x, y) if math.isfinite(b)]
        if pts:
            path = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
            c.add(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
            for a, b in pts:
                c.add(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3.5" fill="{color}"/>')
        ly = c.y1 + 16 + 18 * n
        c.add(f'<line x1="{c.x1 + 10}" y1="{ly}" x2="{c.x1 + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        c.text(c.x1 + 34, ly + 4, name, anchor="start")
    return c.render()


def bar_plot(groups: list[str], series: dict, title: str, ylabel: str,
             ylim: tuple[float, float] = (0.0, 1.0)) -> str:
    """Grouped bars: ``series`` maps a name to one value per group."""
    c = _Canvas(title)
    c.axes((0.0, float(len(groups))), ylim, "", ylabel, [], _ticks(*ylim))
    n = max(len(series), 1)
    slot = (c.x1 - c.x0) / max(len(groups), 1)
    bw = 0.8 * slot / n
    for g, label in enumerate(groups):
        c.text(c.x0 + slot * (g + 0.5), c.y0 + 18, label)
    for s, (name, vals) in enumerate(series.items()):
        color = PALETTE[s % len(PALETTE)]
        for g, v in enumerate(vals):
            if not math.isfinite(v):
                continue
            x = c.x0 + slot * g + 0.1 * slot + s * bw
            top = c.py(min(max(v, ylim[0]), ylim[1]))
            c.add(f'<rect x="{x:.1f}" y="{top:.1f}" width="{bw:.1f}" height="{c.y0 - top:.1f}" fill="{color}"/>')
        ly = c.y1 + 16 + 18 * s
        c.add(f'<rect x="{c.x1 + 10}" y="{ly - 6}" width="14" height="10" fill="{color}"/>')
        c.text(c.x1 + 30, ly + 3, name, anchor="start")
    return c.render()
