"""
Plotting
Minimal deterministic SVG learning curves: score against cumulative cost on a
log-scaled x axis, one polyline per run.
"""

from __future__ import annotations

import math
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

from tools.errors import MissingDataError

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 170, 30, 50
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]

Series = Dict[str, Sequence[Tuple[float, float]]]


def _fmt(value: float) -> str:
    return format(value, ".2f")


def _tick_label(value: float) -> str:
    return format(value, ".3g")


def _log_range(xs: List[float]) -> Tuple[float, float]:
    low = math.floor(math.log10(min(xs)))
    high = math.ceil(math.log10(max(xs)))
    if high == low:
        high = low + 1
    return float(low), float(high)


def learning_curves_svg(
    series: Series,
    title: str = "",
    x_label: str = "cumulative cost",
    y_label: str = "mean top-K score",
) -> str:
    """
    Render (cost, score) series as SVG text. Costs must be positive; the
    output depends only on the inputs, so repeated calls give identical bytes.
    """
    points = [(x, y) for values in series.values() for x, y in values]
    if not points:
        raise MissingDataError("nothing to plot")
    if any(x <= 0 for x, _ in points):
        raise ValueError("costs must be positive on a log axis")

    x_low, x_high = _log_range([x for x, _ in points])
    ys = [y for _, y in points]
    y_low, y_high = min(ys), max(ys)
    if y_high == y_low:
        y_low, y_high = y_low - 1.0, y_high + 1.0
    pad = 0.05 * (y_high - y_low)
    y_low, y_high = y_low - pad, y_high + pad

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(x: float) -> float:
        return MARGIN_LEFT + (math.log10(x) - x_low) / (x_high - x_low) * plot_w

    def py(y: float) -> float:
        return MARGIN_TOP + (1.0 - (y - y_low) / (y_high - y_low)) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')

    for decade in range(int(x_low), int(x_high) + 1):
        x = px(10.0**decade)
        out.append(f'<line x1="{_fmt(x)}" y1="{MARGIN_TOP + plot_h}" x2="{_fmt(x)}" y2="{MARGIN_TOP + plot_h + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{MARGIN_TOP + plot_h + 18}" text-anchor="middle">{_tick_label(10.0**decade)}</text>')
    for i in range(5):
        value = y_low + i * (y_high - y_low) / 4
        y = py(value)
        out.append(f'<line x1="{MARGIN_LEFT - 5}" y1="{_fmt(y)}" x2="{MARGIN_LEFT}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_LEFT - 8}" y="{_fmt(y + 4)}" text-anchor="end">{_tick_label(value)}</text>')
    out.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)} (log scale)</text>'
    )
    out.append(
        f'<text x="16" y="{MARGIN_TOP + plot_h / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_TOP + plot_h / 2})">{escape(y_label)}</text>'
    )

    for i, (name, values) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = [(px(x), py(y)) for x, y in values]
        if len(coords) > 1:
            path = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in coords)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b in coords:
            out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{color}"/>')
        legend_y = MARGIN_TOP + 12 + 18 * i
        legend_x = MARGIN_LEFT + plot_w + 12
        out.append(f'<line x1="{legend_x}" y1="{legend_y}" x2="{legend_x + 20}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{legend_x + 26}" y="{legend_y + 4}">{escape(name)}</text>')

    out.append("</svg>")
    return "\n".join(out) + "\n"
