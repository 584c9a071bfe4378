"""Deterministic SVG figures: sample scatter, metric curves, distance heatmaps."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ndiv.synthdata import DonutSpec

SIZE = 800
PAD = 40

HEADER = ('<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" '
          'viewBox="0 0 {s} {s}" style="background:#ffffff">\n')
FOOTER = "</svg>\n"


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Frame:
    """Maps data coordinates into the padded canvas, y axis pointing up."""

    def __init__(self, lo, hi, square: bool = True):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        if square:
            span[:] = span.max()
            mid = (lo + hi) / 2
            lo = mid - span / 2
        self.lo, self.span = lo, span
        self.inner = SIZE - 2 * PAD

    def __call__(self, x, y):
        px = PAD + (x - self.lo[0]) / self.span[0] * self.inner
        py = SIZE - PAD - (y - self.lo[1]) / self.span[1] * self.inner
        return px, py

    def length(self, d):
        return d / self.span[0] * self.inner


def scatter_svg(points: np.ndarray, donut: Optional[DonutSpec] = None,
                centers: Optional[np.ndarray] = None, color: str = "#1f77b4") -> str:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        raise ValueError("scatter_svg: no points")
    ref = [points]
    if donut is not None:
        c = np.array(donut.center)
        ref.append(np.array([c - donut.outer, c + donut.outer]))
    if centers is not None:
        ref.append(np.asarray(centers, dtype=float))
    allp = np.concatenate(ref)
    margin = 0.05 * max(np.ptp(allp[:, 0]), np.ptp(allp[:, 1]), 1e-9)
    fr = _Frame(allp.min(0) - margin, allp.max(0) + margin)
    out = [HEADER.format(s=SIZE)]
    if donut is not None:
        cx, cy = fr(*donut.center)
        for r in (donut.inner, donut.outer):
            out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(fr.length(r))}" '
                       'fill="none" stroke="#d62728" stroke-width="1.5"/>\n')
    if centers is not None:
        for x, y in np.asarray(centers, dtype=float):
            px, py = fr(x, y)
            out.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="4" fill="none" stroke="#2ca02c"/>\n')
    for x, y in points:
        px, py = fr(x, y)
        out.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="2" fill="{color}"/>\n')
    out.append(FOOTER)
    return "".join(out)


PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def curve_svg(series: dict) -> str:
    """Line plot; ``series`` maps a label to ``(xs, ys)``."""
    if not series or all(len(xs) == 0 for xs, _ in series.values()):
        raise ValueError("curve_svg: no data")
    xs_all = np.concatenate([np.asarray(xs, float) for xs, _ in series.values()])
    ys_all = np.concatenate([np.asarray(ys, float) for _, ys in series.values()])
    fr = _Frame([xs_all.min(), ys_all.min()], [xs_all.max(), ys_all.max()], square=False)
    out = [HEADER.format(s=SIZE)]
    x0, y0 = fr(xs_all.min(), ys_all.min())
    x1, y1 = fr(xs_all.max(), ys_all.max())
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y0)}" stroke="#000000"/>\n')
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(y1)}" stroke="#000000"/>\n')
    for k, (label, (xs, ys)) in enumerate(sorted(series.items())):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_f(px)},{_f(py)}" for px, py in (fr(x, y) for x, y in zip(xs, ys)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>\n')
        out.append(f'<text x="{PAD + 10}" y="{PAD + 16 * (k + 1)}" font-size="14" '
                   f'fill="{color}">{label}</text>\n')
    out.append(FOOTER)
    return "".join(out)


def heatmap_svg(matrix: np.ndarray) -> str:
    """Grayscale grid, one rectangle per entry; darker is larger."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("heatmap_svg: need a non-empty 2-D matrix")
    rows, cols = m.shape
    hi = m.max() if m.max() > 0 else 1.0
    cw, ch = (SIZE - 2 * PAD) / cols, (SIZE - 2 * PAD) / rows
    out = [HEADER.format(s=SIZE)]
    for i in range(rows):
        for j in range(cols):
            g = int(round(255 * (1.0 - np.clip(m[i, j] / hi, 0.0, 1.0))))
            out.append(f'<rect x="{_f(PAD + j * cw)}" y="{_f(PAD + i * ch)}" width="{_f(cw)}" '
                       f'height="{_f(ch)}" fill="#{g:02x}{g:02x}{g:02x}"/>\n')
    out.append(FOOTER)
    return "".join(out)
