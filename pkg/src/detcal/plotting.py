"""Standalone SVG rendering of reliability diagrams and position heatmaps.

Output is plain text with fixed-precision coordinates so that identical
inputs give byte-identical files.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

# viridis anchors, interpolated linearly
_CMAP = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=float)

_FONT = 'font-family="DejaVu Sans, Arial, sans-serif"'


def _f(x):
    return f"{x:.2f}"


def _color(t):
    t = min(max(float(t), 0.0), 1.0) * (len(_CMAP) - 1)
    i = min(int(t), len(_CMAP) - 2)
    rgb = _CMAP[i] + (t - i) * (_CMAP[i + 1] - _CMAP[i])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c)) for c in rgb))


def format_d_ece(value):
    return "n/a" if value is None else f"{100 * value:.3f}%"


class _Svg:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.parts = []

    def add(self, s):
        self.parts.append(s)

    def rect(self, x, y, w, h, fill, stroke="none", **extra):
        attrs = "".join(f' {k.replace("_", "-")}="{v}"' for k, v in extra.items())
        self.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                 f'fill="{fill}" stroke="{stroke}"{attrs}/>')

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{stroke}" stroke-width="{_f(width)}"{d}/>')

    def text(self, x, y, s, size=11, anchor="middle", rotate=None):
        tr = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" {_FONT}{tr}>'
                 f'{escape(s)}</text>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        body = "\n".join(self.parts)
        return f'<?xml version="1.0" encoding="UTF-8"?>\n{head}\n' \
               f'<rect width="100%" height="100%" fill="#ffffff"/>\n{body}\n</svg>\n'


def _axes(svg, x0, y0, w, h, yticks, ylabel, xticks=True):
    svg.rect(x0, y0, w, h, "none", stroke="#000000")
    for frac, label in yticks:
        y = y0 + h - frac * h
        svg.line(x0 - 4, y, x0, y)
        svg.text(x0 - 6, y + 4, label, size=9, anchor="end")
    if xticks:
        for frac in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            x = x0 + frac * w
            svg.line(x, y0 + h, x, y0 + h + 4)
            svg.text(x, y0 + h + 15, f"{frac:.1f}", size=9)
    svg.text(x0 - 36, y0 + h / 2, ylabel, size=10, rotate=-90)


def reliability_svg(reliability, title=""):
    """Confidence histogram (top) above a reliability diagram (bottom).

    ``reliability`` is a :class:`~detcal.metrics.ReliabilityDiagram` or its
    dict form. Bins without samples are left blank.
    """
    if isinstance(reliability, dict):
        from .metrics import ReliabilityDiagram
        reliability = ReliabilityDiagram.from_dict(reliability)
    edges = np.asarray(reliability.edges, dtype=float)
    counts = np.asarray(reliability.counts, dtype=float)
    lo, hi = edges[0], edges[-1]
    total = counts.sum()
    share = counts / total if total > 0 else np.zeros_like(counts)
    top = max(0.05, float(np.ceil(share.max() * 20) / 20)) if total > 0 else 0.05

    svg = _Svg(360, 420)
    x0, w = 60, 270
    hist_y, hist_h = 40, 110
    rel_y, rel_h = 175, 200
    svg.text(180, 22, title, size=13)

    def xpos(v):
        return x0 + (v - lo) / (hi - lo) * w

    _axes(svg, x0, hist_y, w, hist_h,
          [(0.0, "0"), (0.5, f"{50 * top:.1f}"), (1.0, f"{100 * top:.1f}")], "% of samples", xticks=False)
    for i, s in enumerate(share):
        if counts[i] == 0:
            continue
        bh = s / top * hist_h
        svg.rect(xpos(edges[i]), hist_y + hist_h - bh, xpos(edges[i + 1]) - xpos(edges[i]), bh,
                 "#4c72b0", stroke="#ffffff", stroke_width="0.5")

    _axes(svg, x0, rel_y, w, rel_h, [(f, f"{f:.1f}") for f in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)], "Precision")
    for i in range(len(counts)):
        if counts[i] == 0:
            continue
        prec, conf = reliability.precision[i], reliability.confidence[i]
        bx, bw = xpos(edges[i]), xpos(edges[i + 1]) - xpos(edges[i])
        ph = prec * rel_h
        svg.rect(bx, rel_y + rel_h - ph, bw, ph, "#4c72b0", stroke="#ffffff", stroke_width="0.5")
        gy, gh = sorted((rel_y + rel_h - prec * rel_h, rel_y + rel_h - conf * rel_h))
        if gh - gy > 0:
            svg.rect(bx, gy, bw, gh - gy, "#dd5555", stroke="none", fill_opacity="0.45")
    svg.line(x0, rel_y + rel_h, x0 + w, rel_y, stroke="#333333", width=1.0, dash="4 3")
    svg.text(x0 + w / 2, rel_y + rel_h + 32, "Confidence", size=10)
    return svg.render()


def heatmap_svg(heatmap, title="", vmax=None):
    """Grid of per-cell miscalibration over relative (cx, cy) with a colorbar.

    ``heatmap`` is a :class:`~detcal.metrics.PositionHeatmap` or its dict
    form. Empty cells are drawn light grey.
    """
    if isinstance(heatmap, dict):
        from .metrics import PositionHeatmap
        heatmap = PositionHeatmap.from_dict(heatmap)
    values = np.asarray(heatmap.values, dtype=float)
    n = values.shape[0]
    finite = values[np.isfinite(values)]
    if vmax is None:
        vmax = float(finite.max()) if finite.size and finite.max() > 0 else 1.0

    svg = _Svg(380, 340)
    x0, y0, side = 50, 40, 260
    cell = side / n
    svg.text(190, 22, title, size=13)
    for r in range(n):
        for c in range(n):
            v = values[r, c]
            fill = "#e6e6e6" if np.isnan(v) else _color(v / vmax)
            # row 0 (smallest cy) sits at the top, as in image coordinates
            svg.rect(x0 + c * cell, y0 + r * cell, cell, cell, fill)
    svg.rect(x0, y0, side, side, "none", stroke="#000000")
    for frac in (0.0, 0.5, 1.0):
        svg.text(x0 + frac * side, y0 + side + 15, f"{frac:.1f}", size=9)
        svg.text(x0 - 6, y0 + frac * side + 4, f"{frac:.1f}", size=9, anchor="end")
    svg.text(x0 + side / 2, y0 + side + 30, "relative cx", size=10)
    svg.text(x0 - 30, y0 + side / 2, "relative cy", size=10, rotate=-90)

    bx, bw, steps = x0 + side + 20, 14, 50
    for i in range(steps):
        t0 = i / steps
        svg.rect(bx, y0 + side - (i + 1) * side / steps, bw, side / steps + 0.01, _color(t0 + 0.5 / steps))
    svg.rect(bx, y0, bw, side, "none", stroke="#000000")
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y0 + side - frac * side
        svg.line(bx + bw, y, bx + bw + 3, y)
        svg.text(bx + bw + 5, y + 3, f"{100 * frac * vmax:.1f}", size=8, anchor="start")
    svg.text(bx + bw / 2, y0 - 8, "%", size=9)
    return svg.render()
