"""Static SVG plots of planar regions and point sets with fixed-precision output."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = (70, 30, 30, 60)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
N_TICKS = 5


@dataclass(frozen=True)
class Layer:
    name: str
    vertices: np.ndarray  # ordered polygon, segment, single point or empty
    points: np.ndarray | None = None  # scatter markers drawn on top
    filled: bool = True


def _c(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = N_TICKS) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _bounds(layers: Sequence[Layer]) -> tuple[np.ndarray, np.ndarray]:
    pts = [np.asarray(l.vertices, dtype=float).reshape(-1, 2) for l in layers]
    pts += [np.asarray(l.points, dtype=float).reshape(-1, 2) for l in layers
            if l.points is not None]
    allp = np.vstack(pts) if pts else np.zeros((0, 2))
    allp = allp[np.all(np.isfinite(allp), axis=1)]
    if allp.shape[0] == 0:
        return np.array([0.0, 0.0]), np.array([1.0, 1.0])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = hi - lo
    pad = np.where(span > 0, 0.05 * span, np.maximum(0.05 * np.abs(lo), 0.05))
    return lo - pad, hi + pad


def render(layers: Sequence[Layer], labels: Sequence[str], title: str = "") -> str:
    """SVG document with axes, one polygon per layer and a legend."""
    lo, hi = _bounds(layers)
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def sx(x):
        return left + (x - lo[0]) / (hi[0] - lo[0]) * pw

    def sy(y):
        return top + ph - (y - lo[1]) / (hi[1] - lo[1]) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="18" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{escape(title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
               'stroke="black"/>')
    for t in _ticks(lo[0], hi[0]):
        x = sx(t)
        out.append(f'<line x1="{_c(x)}" y1="{top + ph}" x2="{_c(x)}" y2="{top + ph + 5}" '
                   'stroke="black"/>')
        out.append(f'<text x="{_c(x)}" y="{top + ph + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{t:.4g}</text>')
    for t in _ticks(lo[1], hi[1]):
        y = sy(t)
        out.append(f'<line x1="{left - 5}" y1="{_c(y)}" x2="{left}" y2="{_c(y)}" '
                   'stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_c(y + 3)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{t:.4g}</text>')
    out.append(f'<text x="{left + pw / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{escape(labels[0])}</text>')
    out.append(f'<text x="15" y="{top + ph / 2:.0f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 15 {top + ph / 2:.0f})">{escape(labels[1])}</text>')

    for k, layer in enumerate(layers):
        color = PALETTE[k % len(PALETTE)]
        v = np.asarray(layer.vertices, dtype=float).reshape(-1, 2)
        coords = " ".join(f"{_c(sx(x))},{_c(sy(y))}" for x, y in v)
        if v.shape[0] >= 3:
            fill = f'fill="{color}" fill-opacity="0.2"' if layer.filled else 'fill="none"'
            out.append(f'<polygon points="{coords}" {fill} stroke="{color}" '
                       'stroke-width="1.5"/>')
        elif v.shape[0] == 2:
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                       'stroke-width="1.5"/>')
        elif v.shape[0] == 1:
            out.append(f'<circle cx="{_c(sx(v[0, 0]))}" cy="{_c(sy(v[0, 1]))}" r="3" '
                       f'fill="{color}"/>')
        if layer.points is not None:
            for x, y in np.asarray(layer.points, dtype=float).reshape(-1, 2):
                if np.isfinite(x) and np.isfinite(y):
                    out.append(f'<circle cx="{_c(sx(x))}" cy="{_c(sy(y))}" r="2.5" '
                               f'fill="none" stroke="{color}"/>')
        ly = top + 14 + 16 * k
        out.append(f'<rect x="{left + 8}" y="{ly - 9}" width="12" height="10" '
                   f'fill="{color}" fill-opacity="0.4" stroke="{color}"/>')
        out.append(f'<text x="{left + 26}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{escape(layer.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
