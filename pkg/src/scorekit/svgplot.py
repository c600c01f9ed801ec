"""Minimal deterministic SVG line charts.

Output is a pure function of the input series: fixed canvas, fixed palette,
coordinates rounded to 0.01 px. No timestamps, no randomness, so golden-file
comparisons are byte-stable.
"""

import math

from .errors import InputError

WIDTH = 720
HEIGHT = 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70.0, 160.0, 40.0, 55.0

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

_N_TICKS = 5


def _f(v: float) -> str:
    return f"{v:.2f}"


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _transform(points, log_x: bool, log_y: bool):
    """Map data points into plot space, dropping ones a log axis cannot show."""
    out = []
    for x, y in points:
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        if log_x:
            if x <= 0:
                continue
            x = math.log10(x)
        if log_y:
            if y <= 0:
                continue
            y = math.log10(y)
        out.append((float(x), float(y)))
    return out


def _bounds(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = 0.5 if lo == 0 else abs(lo) * 0.1
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _tick_label(v: float, log: bool) -> str:
    return f"{10.0 ** v:.3g}" if log else f"{v:.3g}"


def render_line_chart(series, *, title: str = "", x_label: str = "",
                      y_label: str = "", log_x: bool = False,
                      log_y: bool = False) -> str:
    """Render named point series as an SVG line chart.

    series: iterable of (name, [(x, y), ...]). Empty input still renders
    the axes frame. Series beyond the palette reuse colors cyclically.
    """
    plotted = []
    for item in series:
        try:
            name, points = item
        except (TypeError, ValueError):
            raise InputError("each series must be a (name, points) pair") from None
        plotted.append((str(name), _transform(points, log_x, log_y)))

    xs = [x for _, pts in plotted for x, _ in pts]
    ys = [y for _, pts in plotted for _, y in pts]
    x0, x1 = _bounds(xs) if xs else (0.0, 1.0)
    y0, y1 = _bounds(ys) if ys else (0.0, 1.0)

    px0, px1 = MARGIN_L, WIDTH - MARGIN_R
    py0, py1 = HEIGHT - MARGIN_B, MARGIN_T

    def sx(x):
        return px0 + (x - x0) / (x1 - x0) * (px1 - px0)

    def sy(y):
        return py0 + (y - y0) / (y1 - y0) * (py1 - py0)

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
               f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">')
    out.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" '
               f'fill="white"/>')
    out.append('<g font-family="sans-serif" font-size="12" fill="black">')

    # axes frame
    out.append(f'<rect x="{_f(px0)}" y="{_f(py1)}" width="{_f(px1 - px0)}" '
               f'height="{_f(py0 - py1)}" fill="none" stroke="black"/>')

    # ticks and labels
    for i in range(_N_TICKS):
        frac = i / (_N_TICKS - 1)
        xv = x0 + frac * (x1 - x0)
        xp = sx(xv)
        out.append(f'<line x1="{_f(xp)}" y1="{_f(py0)}" x2="{_f(xp)}" '
                   f'y2="{_f(py0 + 5)}" stroke="black"/>')
        out.append(f'<text x="{_f(xp)}" y="{_f(py0 + 18)}" '
                   f'text-anchor="middle">{_esc(_tick_label(xv, log_x))}</text>')
        yv = y0 + frac * (y1 - y0)
        yp = sy(yv)
        out.append(f'<line x1="{_f(px0 - 5)}" y1="{_f(yp)}" x2="{_f(px0)}" '
                   f'y2="{_f(yp)}" stroke="black"/>')
        out.append(f'<text x="{_f(px0 - 8)}" y="{_f(yp + 4)}" '
                   f'text-anchor="end">{_esc(_tick_label(yv, log_y))}</text>')

    if title:
        out.append(f'<text x="{_f((px0 + px1) / 2)}" y="{_f(MARGIN_T - 14)}" '
                   f'text-anchor="middle" font-size="14">{_esc(title)}</text>')
    if x_label:
        out.append(f'<text x="{_f((px0 + px1) / 2)}" y="{_f(HEIGHT - 12)}" '
                   f'text-anchor="middle">{_esc(x_label)}</text>')
    if y_label:
        yc = (py0 + py1) / 2
        out.append(f'<text x="16" y="{_f(yc)}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {_f(yc)})">{_esc(y_label)}</text>')

    # data
    for si, (name, pts) in enumerate(plotted):
        color = PALETTE[si % len(PALETTE)]
        if len(pts) >= 2:
            coords = " ".join(f"{_f(sx(x))},{_f(sy(y))}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" '
                       f'stroke-width="1.5" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{_f(sx(x))}" cy="{_f(sy(y))}" r="2.5" '
                       f'fill="{color}"/>')

    # legend
    for si, (name, _) in enumerate(plotted):
        color = PALETTE[si % len(PALETTE)]
        ly = MARGIN_T + 14 + 18 * si
        lx = WIDTH - MARGIN_R + 12
        out.append(f'<line x1="{_f(lx)}" y1="{_f(ly - 4)}" x2="{_f(lx + 18)}" '
                   f'y2="{_f(ly - 4)}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_f(lx + 24)}" y="{_f(ly)}">{_esc(name)}</text>')

    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
