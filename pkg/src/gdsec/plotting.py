"""Standalone SVG 1.1 line charts for run traces.

Hand-rolled so the coordinate mapping is exact and machine-checkable: the
root element carries data-* attributes describing the plot box and the data
ranges, and each series is a single polyline, so emitted pixel coordinates
can be inverted back to data values.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]

MARGIN_LEFT = 70.0
MARGIN_RIGHT = 20.0
MARGIN_TOP = 42.0
MARGIN_BOTTOM = 52.0


def _finite_positive(ys):
    ys = np.asarray(ys, dtype=np.float64)
    return ys[(ys > 0) & np.isfinite(ys)]


def render_traces(
    series,
    x_label: str,
    y_label: str = "objective error",
    title: str = "",
    width: float = 840.0,
    height: float = 600.0,
) -> str:
    """Render ``series = [(label, xs, ys), ...]`` as an SVG document.

    The y axis is log10; points with nonpositive y are dropped (they have no
    log image). Raises if nothing plottable remains.
    """
    if not series:
        raise ValueError("nothing to plot")
    pw = width - MARGIN_LEFT - MARGIN_RIGHT
    ph = height - MARGIN_TOP - MARGIN_BOTTOM

    xs_all = np.concatenate([np.asarray(xs, dtype=np.float64) for _, xs, _ in series])
    ys_pos = np.concatenate([_finite_positive(ys) for _, _, ys in series])
    if ys_pos.size == 0:
        raise ValueError("no positive y values to plot on a log scale")
    xmin, xmax = float(xs_all.min()), float(xs_all.max())
    if xmax == xmin:
        xmax = xmin + 1.0
    ly_min, ly_max = math.log10(ys_pos.min()), math.log10(ys_pos.max())
    if ly_max == ly_min:
        ly_max = ly_min + 1.0

    def px(x):
        return MARGIN_LEFT + (x - xmin) / (xmax - xmin) * pw

    def py(y):
        return MARGIN_TOP + (ly_max - math.log10(y)) / (ly_max - ly_min) * ph

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:g}" height="{height:g}" '
        f'viewBox="0 0 {width:g} {height:g}" '
        f'data-xmin="{xmin!r}" data-xmax="{xmax!r}" '
        f'data-log-ymin="{ly_min!r}" data-log-ymax="{ly_max!r}" '
        f'data-plot-left="{MARGIN_LEFT!r}" data-plot-top="{MARGIN_TOP!r}" '
        f'data-plot-width="{pw!r}" data-plot-height="{ph!r}">',
        f'<rect width="{width:g}" height="{height:g}" fill="white"/>',
        f'<rect x="{MARGIN_LEFT:g}" y="{MARGIN_TOP:g}" width="{pw:g}" height="{ph:g}" '
        'fill="none" stroke="#444444" stroke-width="1"/>',
    ]

    # y ticks at integer decades, x ticks on a uniform grid
    for dec in range(math.ceil(ly_min), math.floor(ly_max) + 1):
        ypix = py(10.0**dec)
        parts.append(
            f'<line x1="{MARGIN_LEFT - 5:g}" y1="{ypix:.4f}" x2="{MARGIN_LEFT:g}" '
            f'y2="{ypix:.4f}" stroke="#444444"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT - 8:g}" y="{ypix + 4:.4f}" font-size="12" '
            f'text-anchor="end" font-family="sans-serif">1e{dec}</text>'
        )
    for t in np.linspace(xmin, xmax, 5):
        xpix = px(t)
        parts.append(
            f'<line x1="{xpix:.4f}" y1="{MARGIN_TOP + ph:g}" x2="{xpix:.4f}" '
            f'y2="{MARGIN_TOP + ph + 5:g}" stroke="#444444"/>'
        )
        parts.append(
            f'<text x="{xpix:.4f}" y="{MARGIN_TOP + ph + 20:g}" font-size="12" '
            f'text-anchor="middle" font-family="sans-serif">{t:.4g}</text>'
        )

    for s, (label, xs, ys) in enumerate(series):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        ok = (ys > 0) & np.isfinite(ys) & np.isfinite(xs)
        pts = " ".join(f"{px(x):.4f},{py(y):.4f}" for x, y in zip(xs[ok], ys[ok]))
        color = PALETTE[s % len(PALETTE)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'data-label="{escape(str(label))}" points="{pts}"/>'
        )
        ly = MARGIN_TOP + 16 + 16 * s
        parts.append(
            f'<line x1="{MARGIN_LEFT + 10:g}" y1="{ly:g}" x2="{MARGIN_LEFT + 34:g}" '
            f'y2="{ly:g}" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT + 40:g}" y="{ly + 4:g}" font-size="12" '
            f'font-family="sans-serif">{escape(str(label))}</text>'
        )

    if title:
        parts.append(
            f'<text x="{width / 2:g}" y="24" font-size="15" text-anchor="middle" '
            f'font-family="sans-serif">{escape(title)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_LEFT + pw / 2:g}" y="{height - 12:g}" font-size="13" '
        f'text-anchor="middle" font-family="sans-serif">{escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="16" y="{MARGIN_TOP + ph / 2:g}" font-size="13" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 16 {MARGIN_TOP + ph / 2:g})">'
        f"{escape(y_label)}</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts)


def invert_points(points_attr: str, svg_attrs: dict) -> tuple[np.ndarray, np.ndarray]:
    """Recover data coordinates from a polyline points string and the data-*
    attributes of the enclosing SVG; the inverse of the render mapping."""
    pairs = [p.split(",") for p in points_attr.split()]
    xs_pix = np.array([float(a) for a, _ in pairs])
    ys_pix = np.array([float(b) for _, b in pairs])
    xmin = float(svg_attrs["data-xmin"])
    xmax = float(svg_attrs["data-xmax"])
    ly_min = float(svg_attrs["data-log-ymin"])
    ly_max = float(svg_attrs["data-log-ymax"])
    left = float(svg_attrs["data-plot-left"])
    top = float(svg_attrs["data-plot-top"])
    pw = float(svg_attrs["data-plot-width"])
    ph = float(svg_attrs["data-plot-height"])
    xs = xmin + (xs_pix - left) / pw * (xmax - xmin)
    ys = 10.0 ** (ly_max - (ys_pix - top) / ph * (ly_max - ly_min))
    return xs, ys
