"""Minimal SVG 1.1 line plots (polylines on a framed axis)."""
from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
W, H, PAD = 640, 420, 60


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        return [10.0**k for k in range(math.floor(lo), math.ceil(hi) + 1)]
    span = hi - lo or 1.0
    step = 10 ** math.floor(math.log10(span / 5))
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def line_plot(
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logx: bool = False,
    logy: bool = False,
) -> str:
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(tx(x), ty(y)) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y)
                and (not logx or x > 0) and (not logy or y > 0)]
        if keep:
            pts[name] = keep
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    if not pts:
        out.append("</svg>")
        return "\n".join(out) + "\n"
    allx = [p[0] for v in pts.values() for p in v]
    ally = [p[1] for v in pts.values() for p in v]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x0 == x1:
        x0, x1 = x0 - 1, x1 + 1
    if y0 == y1:
        y0, y1 = y0 - 1, y1 + 1

    def sx(v):
        return PAD + (v - x0) / (x1 - x0) * (W - 2 * PAD)

    def sy(v):
        return H - PAD - (v - y0) / (y1 - y0) * (H - 2 * PAD)

    out.append(f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" '
               'fill="none" stroke="black"/>')
    for v in _ticks(x0, x1, logx):
        tv = math.log10(v) if logx else v
        if x0 <= tv <= x1:
            out.append(f'<text x="{sx(tv):.1f}" y="{H - PAD + 16}" text-anchor="middle" '
                       f'font-size="11">{v:g}</text>')
    for v in _ticks(y0, y1, logy):
        tv = math.log10(v) if logy else v
        if y0 <= tv <= y1:
            out.append(f'<text x="{PAD - 6}" y="{sy(tv) + 4:.1f}" text-anchor="end" '
                       f'font-size="11">{v:g}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 14}" text-anchor="middle" font-size="12">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>')
    for k, (name, p) in enumerate(pts.items()):
        color = _COLORS[k % len(_COLORS)]
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in p)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{coords}"/>')
        out.append(f'<text x="{W - PAD - 4}" y="{PAD + 16 + 15 * k}" text-anchor="end" '
                   f'font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
