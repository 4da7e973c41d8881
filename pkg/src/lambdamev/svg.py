"""Tiny static SVG line and scatter charts; a convenience view of CSV output."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 60, 20, 30, 40
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _bounds(values):
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _scale(lo, hi, a, b):
    span = hi - lo
    return lambda v: a + (v - lo) / span * (b - a)


def _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi):
    x0, x1, y0, y1 = PAD_L, W - PAD_R, H - PAD_B, PAD_T
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = xlo + frac * (xhi - xlo)
        yv = ylo + frac * (yhi - ylo)
        px = x0 + frac * (x1 - x0)
        py = y0 + frac * (y1 - y0)
        out.append(f'<text x="{px:.1f}" y="{y0 + 14}" text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{x0 - 4}" y="{py + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
    return out


def line_chart(path, series, title="", xlabel="t", ylabel=""):
    """series: list of (label, xs, ys)."""
    xlo, xhi = _bounds([x for _, xs, _ in series for x in xs])
    ylo, yhi = _bounds([y for _, _, ys in series for y in ys])
    sx = _scale(xlo, xhi, PAD_L, W - PAD_R)
    sy = _scale(ylo, yhi, H - PAD_B, PAD_T)
    out = _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    for i, (label, xs, ys) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys)
                       if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        out.append(f'<text x="{W - PAD_R - 4}" y="{PAD_T + 12 * (i + 1)}" '
                   f'text-anchor="end" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    _write(path, out)


def scatter_chart(path, xs, ys, title="", xlabel="", ylabel="", radius=0.6):
    xlo, xhi = _bounds(xs)
    ylo, yhi = _bounds(ys)
    sx = _scale(xlo, xhi, PAD_L, W - PAD_R)
    sy = _scale(ylo, yhi, H - PAD_B, PAD_T)
    out = _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    out.append(f'<g fill="{COLORS[0]}">')
    out.extend(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="{radius}"/>'
               for x, y in zip(xs, ys) if math.isfinite(y))
    out.append("</g>")
    out.append("</svg>")
    _write(path, out)


def _write(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
