"""Minimal static SVG scatter/line charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def chart(series, xlabel="", ylabel="", title="", width=480, height=360):
    """``series`` is a list of (label, xs, ys, style) with style 'points' or 'line'."""
    m = {"l": 60, "r": 20, "t": 30, "b": 45}
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    finite = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = (xs[finite], ys[finite]) if finite.any() else (np.zeros(1), np.zeros(1))
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    pw, ph = width - m["l"] - m["r"], height - m["t"] - m["b"]

    def px(x):
        return m["l"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return m["t"] + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{m["l"]}" y="{m["t"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for v in _ticks(x0, x1):
        out.append(f'<text x="{px(v):.1f}" y="{m["t"] + ph + 15}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<text x="{m["l"] - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{m["l"] + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{m["t"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {m["t"] + ph / 2:.1f})">{escape(ylabel)}</text>')
    out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for k, (label, sx, sy, style) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = [(px(a), py(b)) for a, b in zip(np.asarray(sx, float), np.asarray(sy, float))
               if np.isfinite(a) and np.isfinite(b)]
        if style == "line" and pts:
            path = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        else:
            out.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{color}" fill-opacity="0.6"/>'
                       for a, b in pts)
        out.append(f'<text x="{m["l"] + 8}" y="{m["t"] + 14 + 13 * k}" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
