"""Minimal SVG line charts for run diagnostics."""
from __future__ import annotations


from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, *, logy: bool = False,
               width: int = 640, height: int = 400) -> str:
    """Render ``{label: (x, y)}`` as an SVG document string."""
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    pts = {}
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logy:
            keep &= y > 0
            y = np.where(keep, np.log10(np.where(y > 0, y, 1.0)), np.nan)
        pts[label] = (x[keep], y[keep])
    xs = np.concatenate([p[0] for p in pts.values()] or [np.zeros(1)])
    ys = np.concatenate([p[1] for p in pts.values()] or [np.zeros(1)])
    if xs.size == 0:
        xs, ys = np.zeros(1), np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">'
           f'{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        ylab = f"1e{yv:.1f}" if logy else f"{yv:.3g}"
        out.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{ylab}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for n, (label, (x, y)) in enumerate(pts.items()):
        color = _COLORS[n % len(_COLORS)]
        if x.size:
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{path}"/>')
        ly = top + 14 + 16 * n
        out.append(f'<line x1="{left + pw - 120}" y1="{ly}" x2="{left + pw - 100}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 95}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, *args, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(line_chart(*args, **kw))


