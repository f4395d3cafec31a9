"""Deterministic SVG output.

Only a small subset of SVG is emitted: ``svg``, ``g``, ``rect``, ``line``,
``polyline``, ``path`` and ``text`` with presentation attributes (no CSS, no
scripts). Coordinates are printed with 2 decimals, so identical inputs
give identical bytes.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..fielddata.episodes import CLASS_NAMES

# label -> fill colour for timeline bands and bars
LEGEND = {0: "#1f5fbf", 1: "#e6c200", 2: "#2ca02c", 3: "#d62728"}
LEGEND_NAMES = {0: "blue", 1: "yellow", 2: "green", 3: "red"}


class PlotError(ValueError):
    pass


def _f(v: float) -> str:
    return f"{float(v):.2f}"


class _Svg:
    def __init__(self, width: float, height: float):
        self.w, self.h = width, height
        self.parts: list[str] = []

    def rect(self, x, y, w, h, fill, stroke=None):
        s = f' stroke="{stroke}"' if stroke else ""
        self.parts.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"{s}/>')

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0):
        self.parts.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                          f'stroke="{stroke}" stroke-width="{_f(width)}"/>')

    def polyline(self, xs, ys, stroke, width=1.0):
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{_f(width)}"/>')

    def dots(self, xs, ys, color, size=1.5):
        d = "".join(f"M{_f(x)} {_f(y)}h0" for x, y in zip(xs, ys))
        self.parts.append(f'<path d="{d}" stroke="{color}" stroke-width="{_f(size)}" stroke-linecap="round"/>')

    def text(self, x, y, s, size=10, anchor="start"):
        self.parts.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
                          f'font-family="sans-serif">{escape(str(s))}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.w)}" height="{_f(self.h)}" '
                f'viewBox="0 0 {_f(self.w)} {_f(self.h)}">')
        return "\n".join([head, *self.parts, "</svg>"]) + "\n"


def _write(svg: _Svg, path) -> Path:
    path = Path(path)
    try:
        path.write_text(svg.render())
    except OSError as exc:
        raise PlotError(f"cannot write {path}: {exc.strerror}") from None
    return path


def _legend(svg: _Svg, x: float, y: float) -> None:
    for c, name in enumerate(CLASS_NAMES):
        svg.rect(x + 130 * c, y - 9, 10, 10, LEGEND[c])
        svg.text(x + 130 * c + 14, y, name)


def metrics_bars(rows: dict[str, np.ndarray], path) -> Path:
    """Grouped bars: for every model, four per-class accuracies plus the average (percent)."""
    if not rows:
        raise PlotError("no rows to plot")
    group_w, bar_w, left, top, plot_h = 120.0, 18.0, 50.0, 30.0, 200.0
    svg = _Svg(left + group_w * len(rows) + 20, top + plot_h + 70)
    for pct in (0, 25, 50, 75, 100):
        y = top + plot_h * (1 - pct / 100)
        svg.line(left, y, svg.w - 10, y, "#ccc", 0.5)
        svg.text(left - 5, y + 3, pct, 9, "end")
    for g, (name, vals) in enumerate(rows.items()):
        vals = np.asarray(vals, dtype=np.float64)
        if vals.shape != (5,):
            raise PlotError(f"row {name!r} needs 4 class accuracies and the average")
        x0 = left + g * group_w + 10
        for i, v in enumerate(vals):
            h = plot_h * np.clip(v, 0, 100) / 100
            svg.rect(x0 + i * bar_w, top + plot_h - h, bar_w - 2, h, LEGEND[i] if i < 4 else "#555")
        svg.text(x0 + 2.5 * bar_w, top + plot_h + 14, name, 10, "middle")
        svg.text(x0 + 2.5 * bar_w, top + plot_h + 26, f"avg {vals[4]:.1f}", 9, "middle")
    _legend(svg, left, svg.h - 12)
    return _write(svg, path)


def timeline(rows: list[tuple[str, np.ndarray]], path, probs: np.ndarray | None = None, t=None) -> Path:
    """Colour bands, one row per label sequence (e.g. ground truth, then models).

    Optional ``probs`` (T, 4) are drawn as curves under the bands.
    """
    if not rows or any(len(np.asarray(r)) == 0 for _, r in rows):
        raise PlotError("empty trace")
    n = len(np.asarray(rows[0][1]))
    if any(len(np.asarray(r)) != n for _, r in rows):
        raise PlotError("label rows differ in length")
    left, top, band_h, width = 110.0, 20.0, 18.0, 600.0
    curve_h = 120.0 if probs is not None else 0.0
    svg = _Svg(left + width + 20, top + band_h * len(rows) + curve_h + 60)
    step = width / n
    for r, (name, labels) in enumerate(rows):
        y = top + r * band_h
        svg.text(left - 6, y + 13, name, 10, "end")
        labels = np.asarray(labels, dtype=np.int64)
        start = 0
        for i in range(1, n + 1):
            if i == n or labels[i] != labels[start]:
                svg.rect(left + start * step, y, (i - start) * step, band_h - 3, LEGEND[int(labels[start])])
                start = i
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (n, 4):
            raise PlotError("probabilities must be (T, 4)")
        y0 = top + band_h * len(rows) + 10
        svg.rect(left, y0, width, curve_h, "none", "#999")
        xs = left + step * (np.arange(n) + 0.5)
        for c in range(4):
            svg.polyline(xs, y0 + curve_h * (1 - probs[:, c]), LEGEND[c], 1.2)
        svg.text(left - 6, y0 + curve_h / 2, "p(class)", 10, "end")
    if t is not None:
        t = np.asarray(t)
        svg.text(left, svg.h - 28, f"t = {t[0]}", 9)
        svg.text(left + width, svg.h - 28, f"t = {t[-1]}", 9, "end")
    _legend(svg, left, svg.h - 10)
    return _write(svg, path)


def _scan_panel(svg: _Svg, x0, y0, size, points_list, colors, title=None, reach=1.8):
    svg.rect(x0, y0, size, size, "#fff", "#999")
    cx, cy, scale = x0 + size / 2, y0 + size * 0.8, size * 0.45 / reach
    svg.rect(cx - 3, cy - 3, 6, 6, "#000")
    for pts, color in zip(points_list, colors):
        pts = np.asarray(pts)
        keep = np.all(np.isfinite(pts), axis=1) & (np.hypot(pts[:, 0], pts[:, 1]) < reach - 1e-9)
        svg.dots(cx + scale * pts[keep, 0], cy - scale * pts[keep, 1], color)
    if title:
        svg.text(x0 + 4, y0 + 12, title, 9)


def grid_map(grid, path, panel: float = 120.0) -> Path:
    """n x n scatter panels of decoded point clouds; z2 grows upward."""
    rows, cols = grid.ranges_m.shape[:2]
    svg = _Svg(cols * panel + 40, rows * panel + 40)
    for i in range(rows):
        for j in range(cols):
            x0 = 30 + j * panel
            y0 = 10 + (rows - 1 - i) * panel
            _scan_panel(svg, x0, y0, panel - 4, [grid.points[i, j]], ["#1f5fbf"],
                        f"z=({grid.z1[j]:.1f},{grid.z2[i]:.1f})")
    svg.text(30 + cols * panel / 2, svg.h - 8, "z1", 11, "middle")
    svg.text(12, 10 + rows * panel / 2, "z2", 11, "middle")
    return _write(svg, path)


def reconstruction_panels(panels: list[tuple[str, np.ndarray, np.ndarray]], path, panel: float = 200.0) -> Path:
    """One panel per (title, original points, reconstructed points); grey = input, blue = decoded."""
    if not panels:
        raise PlotError("no panels")
    svg = _Svg(len(panels) * panel + 20, panel + 30)
    for k, (title, orig, recon) in enumerate(panels):
        _scan_panel(svg, 10 + k * panel, 10, panel - 6, [orig, recon], ["#999", "#1f5fbf"], title)
    return _write(svg, path)
