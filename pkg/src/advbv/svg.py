"""Minimal deterministic SVG line-chart writer for sweep curves.

Hand-rolled rather than pulled from a plotting stack so the output is a
small, self-contained, byte-stable vector file that always parses as XML.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["render_curves"]

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 40, 55
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = np.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def render_curves(
    path,
    x,
    series: dict,
    threshold: float | None = None,
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
) -> None:
    """Write a labeled multi-curve chart; a dashed vertical line marks the
    threshold when one is given."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 1:
        raise ValueError("need at least one point")
    ys = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    for k, v in ys.items():
        if v.shape != x.shape:
            raise ValueError(f"series {k!r} does not match the x grid")

    x_lo, x_hi = float(x.min()), float(x.max())
    if x_hi <= x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    all_y = np.concatenate([v for v in ys.values()]) if ys else np.array([0.0, 1.0])
    finite = all_y[np.isfinite(all_y)]
    y_lo = float(min(0.0, finite.min())) if finite.size else 0.0
    y_hi = float(finite.max()) if finite.size else 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    y_hi += 0.05 * (y_hi - y_lo)

    px_w = WIDTH - MARGIN_L - MARGIN_R
    px_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(v):
        return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * px_w

    def sy(v):
        return MARGIN_T + px_h - (v - y_lo) / (y_hi - y_lo) * px_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    # axes
    x0, y0 = MARGIN_L, MARGIN_T + px_h
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + px_w}" y2="{y0}" stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN_T}" stroke="black" stroke-width="1"/>'
    )
    for t in _ticks(x_lo, x_hi):
        px = sx(t)
        parts.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" y2="{y0 + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{_fmt(px)}" y="{y0 + 18}" font-size="11" text-anchor="middle">{_fmt(t)}</text>'
        )
    for t in _ticks(y_lo, y_hi):
        py = sy(t)
        parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" y2="{_fmt(py)}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{_fmt(py + 4)}" font-size="11" text-anchor="end">{_fmt(t)}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{MARGIN_L + px_w / 2}" y="{HEIGHT - 12}" font-size="13" '
            f'text-anchor="middle">{escape(xlabel)}</text>'
        )
    if ylabel:
        cx, cy = 18, MARGIN_T + px_h / 2
        parts.append(
            f'<text x="{cx}" y="{_fmt(cy)}" font-size="13" text-anchor="middle" '
            f'transform="rotate(-90 {cx} {_fmt(cy)})">{escape(ylabel)}</text>'
        )
    if title:
        parts.append(
            f'<text x="{MARGIN_L + px_w / 2}" y="22" font-size="14" '
            f'text-anchor="middle">{escape(title)}</text>'
        )

    if threshold is not None and x_lo <= threshold <= x_hi:
        px = sx(threshold)
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{MARGIN_T}" x2="{_fmt(px)}" y2="{y0}" '
            f'stroke="gray" stroke-width="1.5" stroke-dasharray="6,4" class="threshold"/>'
        )

    for idx, (label, v) in enumerate(ys.items()):
        color = COLORS[idx % len(COLORS)]
        ok = np.isfinite(v)
        pts = [(sx(a), sy(b)) for a, b in zip(x[ok], v[ok])]
        if len(pts) >= 2:
            coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
        for a, b in pts:
            parts.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{color}"/>')
        ly = MARGIN_T + 14 + 18 * idx
        lx = MARGIN_L + px_w + 14
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-size="12">{escape(str(label))}</text>')

    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
