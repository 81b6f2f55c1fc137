"""Minimal standalone SVG line charts.

No rendering dependencies: the chart is assembled as text with fixed
geometry and a fixed palette, so identical inputs give identical bytes.
CSV stays the authoritative output; these charts are a convenience.
"""

from __future__ import annotations

import math

WIDTH = 640
HEIGHT = 420
MARGIN_L = 64
MARGIN_R = 24
MARGIN_T = 40
MARGIN_B = 48

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf")


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(1, target)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:g}"


def line_chart(series: dict[str, list[tuple[float, float]]],
               title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Render named (x, y) series as an SVG document string."""
    points = [pt for pts in series.values() for pt in pts]
    if not points:
        raise ValueError("no data points")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x: float) -> float:
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:g}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    axis_style = 'stroke="#333" stroke-width="1"'
    text_style = 'font-family="sans-serif" font-size="11" fill="#333"'
    for t in _nice_ticks(x_lo, x_hi):
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{MARGIN_T + plot_h}" '
                   f'x2="{px:.2f}" y2="{MARGIN_T + plot_h + 5}" {axis_style}/>')
        out.append(f'<text x="{px:.2f}" y="{MARGIN_T + plot_h + 18}" '
                   f'text-anchor="middle" {text_style}>{_fmt(t)}</text>')
    for t in _nice_ticks(y_lo, y_hi):
        py = sy(t)
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.2f}" '
                   f'x2="{MARGIN_L}" y2="{py:.2f}" {axis_style}/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{py + 4:.2f}" '
                   f'text-anchor="end" {text_style}>{_fmt(t)}</text>')
        out.append(f'<line x1="{MARGIN_L}" y1="{py:.2f}" '
                   f'x2="{MARGIN_L + plot_w}" y2="{py:.2f}" '
                   f'stroke="#ddd" stroke-width="0.5"/>')
    out.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
               f'y2="{MARGIN_T + plot_h}" {axis_style}/>')
    out.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T + plot_h}" '
               f'x2="{MARGIN_L + plot_w}" y2="{MARGIN_T + plot_h}" '
               f'{axis_style}/>')
    if xlabel:
        out.append(f'<text x="{MARGIN_L + plot_w / 2:g}" y="{HEIGHT - 10}" '
                   f'text-anchor="middle" {text_style}>{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{MARGIN_T + plot_h / 2:g}" '
                   f'text-anchor="middle" {text_style} transform="rotate(-90 '
                   f'16 {MARGIN_T + plot_h / 2:g})">{ylabel}</text>')

    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}"
                          for x, y in sorted(pts))
        out.append(f'<polyline points="{coords}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        for x, y in pts:
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" '
                       f'fill="{color}"/>')
        ly = MARGIN_T + 14 * i
        out.append(f'<line x1="{WIDTH - 150}" y1="{ly:g}" '
                   f'x2="{WIDTH - 130}" y2="{ly:g}" stroke="{color}" '
                   f'stroke-width="1.5"/>')
        out.append(f'<text x="{WIDTH - 125}" y="{ly + 4:g}" '
                   f'{text_style}>{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
