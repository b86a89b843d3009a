"""Dependency-free SVG line and scatter charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .errors import UsageError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#17becf")
WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 150, 40, 50


def _num(v):
    return format(v, ".6g")


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _shade(frac):
    # 0 -> light grey-blue, 1 -> near black
    level = int(round(200 - 180 * frac))
    return f"#{level:02x}{level:02x}{min(255, level + 40):02x}"


def emit_svg(series, title="", xlabel="", ylabel="", style="line"):
    """Render ``[(label, [(x, y), ...]), ...]`` as a standalone SVG document.

    ``style`` is ``line`` (one colour per series) or ``embedding`` (points
    shaded darker with their order, first point drawn as a black dot).
    Every point gets a ``circle.marker``; every series a ``g.legend-entry``.
    """
    series = [(str(label), [(float(x), float(y)) for x, y in pts]) for label, pts in series]
    if not series or not any(pts for _, pts in series):
        raise UsageError("cannot plot an empty series")
    if style not in ("line", "embedding"):
        raise UsageError(f"unknown plot style {style!r}")
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if style == "embedding":
        # equal aspect, so distances read correctly
        half = max(x1 - x0, y1 - y0, 1e-12) / 2
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        x0, x1, y0, y1 = cx - half, cx + half, cy - half, cy + half
    pad_x = (x1 - x0) * 0.05 or 0.5
    pad_y = (y1 - y0) * 0.05 or 0.5
    x0, x1, y0, y1 = x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN_T + ph - (y - y0) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text class="title" x="{MARGIN_L + pw / 2}" y="22" text-anchor="middle" '
        f'font-size="15">{escape(title)}</text>',
        f'<g class="axes" stroke="black" fill="none">'
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T + ph}" x2="{MARGIN_L + pw}" y2="{MARGIN_T + ph}"/>'
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{MARGIN_T + ph}"/></g>',
    ]
    for tx in _ticks(x0 + pad_x, x1 - pad_x):
        out.append(f'<text x="{sx(tx):.2f}" y="{MARGIN_T + ph + 16}" text-anchor="middle">'
                   f'{_num(tx)}</text>')
    for ty in _ticks(y0 + pad_y, y1 - pad_y):
        out.append(f'<text x="{MARGIN_L - 6}" y="{sy(ty) + 4:.2f}" text-anchor="end">'
                   f'{_num(ty)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN_T + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN_T + ph / 2})">{escape(ylabel)}</text>')

    for k, (label, pts) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<g class="series" data-label="{escape(label)}">')
        if style == "line" and len(pts) > 1:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"/>')
        for i, (x, y) in enumerate(pts):
            if style == "embedding":
                fill = "black" if i == 0 else _shade(i / max(1, len(pts) - 1))
                r = 5 if i == 0 else 3.5
            else:
                fill, r = color, 2.5
            out.append(f'<circle class="marker" cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="{r}" '
                       f'fill="{fill}"/>')
        out.append("</g>")

    lx, ly = WIDTH - MARGIN_R + 12, MARGIN_T + 10
    out.append('<g class="legend">')
    for k, (label, _) in enumerate(series):
        color = "black" if style == "embedding" else PALETTE[k % len(PALETTE)]
        y = ly + 18 * k
        out.append(f'<g class="legend-entry"><rect x="{lx}" y="{y - 9}" width="12" height="12" '
                   f'fill="{color}"/><text x="{lx + 18}" y="{y + 1}">{escape(label)}</text></g>')
    if style == "embedding":
        y = ly + 18 * len(series)
        out.append(f'<text x="{lx}" y="{y + 1}" font-size="10">darker = later iteration</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
