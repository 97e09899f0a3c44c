"""Self-contained deterministic SVG plots (no timestamps, fixed formatting).

Scatter + level-set contour plots follow the binary-classification color
convention: positive class blue, negative red; the zero set is black and
the +1 / -1 level sets are tinted blue / red.
"""

from __future__ import annotations

import numpy as np

CANVAS = 640
MARGIN = 50

POS_COLOR = "#1f77b4"
NEG_COLOR = "#d62728"
LEVEL_COLORS = {0.0: "#000000", 1.0: "#7fb3d9", -1.0: "#e89b9b"}
SERIES_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v):
    return format(float(v), ".6g")


class _Svg:
    def __init__(self, width=CANVAS, height=CANVAS):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def text(self, x, y, s, size=14, color="#333333", anchor="start"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" fill="{color}" '
            f'font-family="sans-serif" text-anchor="{anchor}">{s}</text>')

    def circle(self, x, y, r, color):
        self.parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r)}" fill="{color}"/>')

    def polyline(self, pts, color, width=1.5, closed=False):
        d = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        tag = "polygon" if closed else "polyline"
        self.parts.append(f'<{tag} points="{d}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def line(self, x0, y0, x1, y1, color="#999999", width=1.0):
        self.parts.append(
            f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" '
            f'stroke="{color}" stroke-width="{width}"/>')

    def write(self, path):
        with open(path, "w") as f:
            f.write("\n".join(self.parts) + "\n</svg>\n")


def _mapper(bounds):
    lo = np.array([bounds[0][0], bounds[1][0]], dtype=float)
    hi = np.array([bounds[0][1], bounds[1][1]], dtype=float)
    span = np.where(hi > lo, hi - lo, 1.0)
    inner = CANVAS - 2 * MARGIN

    def to_px(p):
        t = (np.asarray(p, float) - lo) / span
        return MARGIN + t[0] * inner, CANVAS - MARGIN - t[1] * inner

    return to_px


def scatter_contours_svg(path, X, y, contours, bounds, title=""):
    """Scatter of labeled 2D points with level-set polylines.

    ``contours`` is a list of (level, [(polyline, closed), ...]).
    """
    svg = _Svg()
    to_px = _mapper(bounds)
    svg.text(MARGIN, 28, title or "level sets", size=16)
    for level, chains in contours:
        color = LEVEL_COLORS.get(float(level), "#888888")
        for chain, closed in chains:
            if len(chain) >= 2:
                svg.polyline([to_px(p) for p in chain], color, width=2.0, closed=closed)
    if X is not None and len(X):
        for p, label in zip(np.asarray(X, float), np.asarray(y)):
            px, py = to_px(p)
            svg.circle(px, py, 4.0, POS_COLOR if label > 0 else NEG_COLOR)
    ly = CANVAS - 18
    svg.circle(MARGIN + 6, ly - 4, 4, POS_COLOR)
    svg.text(MARGIN + 16, ly, "positive", size=12)
    svg.circle(MARGIN + 96, ly - 4, 4, NEG_COLOR)
    svg.text(MARGIN + 106, ly, "negative", size=12)
    svg.text(MARGIN + 196, ly, "levels: 0 black, +1 blue tint, -1 red tint", size=12)
    svg.write(path)


def loss_curves_svg(path, series, title=""):
    """Line plot of named per-epoch series ({name: list of floats})."""
    svg = _Svg()
    svg.text(MARGIN, 28, title or "training curves", size=16)
    names = [n for n in series if len(series[n])]
    if not names:
        svg.text(CANVAS / 2, CANVAS / 2, "no data recorded", size=16, anchor="middle",
                 color="#aa3333")
        svg.write(path)
        return
    all_vals = np.concatenate([np.asarray(series[n], float) for n in names])
    finite = all_vals[np.isfinite(all_vals)]
    vlo = float(finite.min()) if finite.size else 0.0
    vhi = float(finite.max()) if finite.size else 1.0
    if vhi <= vlo:
        vhi = vlo + 1.0
    n_epochs = max(len(series[n]) for n in names)
    inner = CANVAS - 2 * MARGIN

    def to_px(i, v):
        x = MARGIN + (i / max(n_epochs - 1, 1)) * inner
        t = (v - vlo) / (vhi - vlo)
        return x, CANVAS - MARGIN - t * inner

    svg.line(MARGIN, CANVAS - MARGIN, CANVAS - MARGIN, CANVAS - MARGIN)
    svg.line(MARGIN, MARGIN, MARGIN, CANVAS - MARGIN)
    svg.text(MARGIN, CANVAS - MARGIN + 16, "0", size=11)
    svg.text(CANVAS - MARGIN, CANVAS - MARGIN + 16, str(n_epochs - 1), size=11, anchor="end")
    svg.text(MARGIN - 4, CANVAS - MARGIN, _fmt(vlo), size=11, anchor="end")
    svg.text(MARGIN - 4, MARGIN + 6, _fmt(vhi), size=11, anchor="end")
    for idx, name in enumerate(names):
        vals = np.asarray(series[name], float)
        pts = [to_px(i, v) for i, v in enumerate(vals) if np.isfinite(v)]
        color = SERIES_COLORS[idx % len(SERIES_COLORS)]
        if len(pts) == 1:
            svg.circle(pts[0][0], pts[0][1], 3, color)
        elif pts:
            svg.polyline(pts, color, width=1.5)
        svg.text(MARGIN + 10, MARGIN + 18 + 16 * idx, name, size=12, color=color)
    svg.write(path)
