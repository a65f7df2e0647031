"""Minimal SVG line charts for sweep summaries (no plotting dependency)."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str,
               ylabel: str, logx: bool = False, width: int = 640, height: int = 400) -> str:
    pts = [p for s in series.values() for p in s if math.isfinite(p[1])]
    if not pts:
        raise ValueError("nothing to plot")
    fx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    xs = [fx(x) for x, _ in pts]
    ys = [y for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = 0.0, max(ys) * 1.05 or 1.0
    if x1 == x0:
        x1 = x0 + 1
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (fx(x) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{ml + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
           f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>',
           f'<text x="{ml - 6}" y="{mt + 4}" text-anchor="end">{y1:.3g}</text>',
           f'<text x="{ml - 6}" y="{mt + ph}" text-anchor="end">{y0:.3g}</text>']
    for i, (name, s) in enumerate(sorted(series.items())):
        color = COLORS[i % len(COLORS)]
        s = [(x, y) for x, y in s if math.isfinite(y)]
        path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        out.append(f'<text x="{ml + 10}" y="{mt + 16 + 16 * i}" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path: str | Path, *args, **kwargs) -> None:
    Path(path).write_text(line_chart(*args, **kwargs))
