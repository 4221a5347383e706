"""Minimal deterministic SVG line plots and heatmaps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=150, top=30, bottom=50)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


class PlotError(ValueError):
    pass


@dataclass
class Series:
    label: str
    points: Sequence[tuple[float, float]]
    style: dict = field(default_factory=dict)  # color, width, opacity, marker(bool), dash


@dataclass
class PlotSpec:
    series: list[Series] = field(default_factory=list)
    x_scale: str = "log"
    y_scale: str = "log"
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    path: Optional[str] = None
    legend: bool = True
    metadata: str = ""


def _n(v: float) -> str:
    return f"{v:.2f}"


def _check(spec: PlotSpec) -> None:
    for s in (spec.x_scale, spec.y_scale):
        if s not in ("log", "linear"):
            raise PlotError(f"unknown axis scale {s!r}")
    for ser in spec.series:
        for x, y in ser.points:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise PlotError(f"series {ser.label!r}: non-finite point ({x}, {y})")
            if spec.x_scale == "log" and x <= 0:
                raise PlotError(f"series {ser.label!r}: x={x} on a log axis")
            if spec.y_scale == "log" and y <= 0:
                raise PlotError(f"series {ser.label!r}: y={y} on a log axis")


def _range(vals: list[float], scale: str) -> tuple[float, float]:
    """Axis limits in transformed units (log10 for log axes)."""
    if not vals:
        return (0.0, 1.0)
    t = [math.log10(v) for v in vals] if scale == "log" else list(vals)
    lo, hi = min(t), max(t)
    if scale == "log":
        lo, hi = math.floor(lo), math.ceil(hi)
        if lo == hi:
            hi = lo + 1
        return lo, hi
    if lo == hi:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, scale: str) -> list[tuple[float, str]]:
    if scale == "log":
        return [(float(e), f"1e{e}") for e in range(int(lo), int(hi) + 1)]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / 5))
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * span:
        out.append((v, f"{v:.6g}"))
        v += step
    return out


class _Frame:
    def __init__(self, xr, yr, xs, ys):
        self.xr, self.yr, self.xs, self.ys = xr, yr, xs, ys
        self.x0 = MARGIN["left"]
        self.x1 = WIDTH - MARGIN["right"]
        self.y0 = HEIGHT - MARGIN["bottom"]
        self.y1 = MARGIN["top"]

    def tx(self, t: float) -> float:
        return self.x0 + (t - self.xr[0]) / (self.xr[1] - self.xr[0]) * (self.x1 - self.x0)

    def ty(self, t: float) -> float:
        return self.y0 - (t - self.yr[0]) / (self.yr[1] - self.yr[0]) * (self.y0 - self.y1)

    def px(self, x: float, y: float) -> tuple[float, float]:
        xt = math.log10(x) if self.xs == "log" else x
        yt = math.log10(y) if self.ys == "log" else y
        return self.tx(xt), self.ty(yt)


def render_svg(spec: PlotSpec) -> str:
    """SVG text for ``spec``; identical specs give identical bytes."""
    _check(spec)
    xs = [p[0] for s in spec.series for p in s.points]
    ys = [p[1] for s in spec.series for p in s.points]
    f = _Frame(_range(xs, spec.x_scale), _range(ys, spec.y_scale), spec.x_scale, spec.y_scale)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f"<desc>{escape(spec.metadata)}</desc>" if spec.metadata else "",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect class="frame" x="{f.x0}" y="{f.y1}" width="{f.x1 - f.x0}" height="{f.y0 - f.y1}" fill="none" stroke="black"/>',
    ]
    for t, label in _ticks(*f.xr, spec.x_scale):
        x = _n(f.tx(t))
        out.append(f'<line class="xtick" data-value="{t!r}" x1="{x}" y1="{f.y0}" x2="{x}" y2="{f.y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{f.y0 + 18}" text-anchor="middle">{escape(label)}</text>')
    for t, label in _ticks(*f.yr, spec.y_scale):
        y = _n(f.ty(t))
        out.append(f'<line class="ytick" data-value="{t!r}" x1="{f.x0 - 5}" y1="{y}" x2="{f.x0}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{f.x0 - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">{escape(label)}</text>')
    if spec.title:
        out.append(f'<text x="{(f.x0 + f.x1) / 2}" y="18" text-anchor="middle" font-size="13">{escape(spec.title)}</text>')
    if spec.x_label:
        out.append(f'<text x="{(f.x0 + f.x1) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(spec.x_label)}</text>')
    if spec.y_label:
        cy = (f.y0 + f.y1) / 2
        out.append(f'<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">{escape(spec.y_label)}</text>')
    legend_y = f.y1 + 10
    for i, ser in enumerate(spec.series):
        color = ser.style.get("color", PALETTE[i % len(PALETTE)])
        width = ser.style.get("width", 1.5)
        opacity = ser.style.get("opacity", 1.0)
        dash = f' stroke-dasharray="{ser.style["dash"]}"' if "dash" in ser.style else ""
        pts = " ".join(f"{_n(a)},{_n(b)}" for a, b in (f.px(x, y) for x, y in ser.points))
        if len(ser.points) > 1:
            out.append(
                f'<polyline class="series" data-label="{escape(ser.label)}" points="{pts}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"{dash}/>'
            )
        if ser.style.get("marker", len(ser.points) == 1):
            for x, y in ser.points:
                a, b = f.px(x, y)
                out.append(f'<circle cx="{_n(a)}" cy="{_n(b)}" r="2.5" fill="{color}" fill-opacity="{opacity}"/>')
        if spec.legend and ser.label and not ser.style.get("no_legend"):
            lx = f.x1 + 12
            out.append(f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 18}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{lx + 24}" y="{legend_y}" dominant-baseline="middle">{escape(ser.label)}</text>')
            legend_y += 15
    out.append("</svg>")
    return "\n".join(line for line in out if line) + "\n"


def emit_svg(spec: PlotSpec, path=None) -> Path:
    target = path or spec.path
    if target is None:
        raise PlotError("no output path")
    Path(target).write_text(render_svg(spec))
    return Path(target)


def render_heatmap(values: np.ndarray, max_cells: int = 200, title: str = "", metadata: str = "") -> str:
    """Grey-scale heatmap of a square matrix, block-averaged down to ``max_cells``."""
    M = np.asarray(values, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise PlotError("heatmap needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise PlotError("heatmap values must be finite")
    m = M.shape[0]
    cells = min(m, max_cells)
    edges = np.linspace(0, m, cells + 1).astype(int)
    lo, hi = (float(M.min()), float(M.max())) if m else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    size = 400
    c = size / max(cells, 1)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 40}" height="{size + 40}" font-family="sans-serif" font-size="11">',
        f"<desc>{escape(metadata)}</desc>" if metadata else "",
        f'<text x="{(size + 40) / 2}" y="14" text-anchor="middle">{escape(title)}</text>' if title else "",
    ]
    for i in range(cells):
        for j in range(cells):
            block = M[edges[i] : edges[i + 1], edges[j] : edges[j + 1]]
            level = int(round(255 * (1 - (block.mean() - lo) / span)))
            out.append(f'<rect x="{_n(20 + j * c)}" y="{_n(20 + i * c)}" width="{_n(c)}" height="{_n(c)}" fill="rgb({level},{level},{level})"/>')
    out.append("</svg>")
    return "\n".join(line for line in out if line) + "\n"
