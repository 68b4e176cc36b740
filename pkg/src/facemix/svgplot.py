"""Byte-stable SVG rendering of race-mix metrics on the tetrahedron net.

No plotting dependency: the output is assembled from fixed-precision strings
so identical inputs give identical bytes, which the experiment harness relies
on for its determinism guarantees. Each panel draws the flattened-tetrahedron
net from `net_layout` with one circle per merged marker, colored by a metric
value, plus a horizontal color-scale legend.
"""

from __future__ import annotations

import math

from .distributions import NetMarker, Race, RaceMix

__all__ = [
    "VIRIDIS_STOPS",
    "color_for",
    "net_panels_svg",
]

# Five-stop approximation of the viridis ramp, interpolated component-wise.
VIRIDIS_STOPS: tuple[str, ...] = (
    "#440154",
    "#3b528b",
    "#21918c",
    "#5ec962",
    "#fde725",
)

_SQRT3_2 = math.sqrt(3.0) / 2.0


def _hex_to_rgb(color: str) -> tuple[int, int, int]:
    return (int(color[1:3], 16), int(color[3:5], 16), int(color[5:7], 16))


def color_for(value: float, lo: float, hi: float) -> str:
    """Map `value` on [lo, hi] to a viridis hex color.

    A degenerate range (hi <= lo) maps everything to the ramp midpoint, so a
    constant-metric panel still renders.
    """
    if not (math.isfinite(value) and math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("color scale needs finite values")
    t = 0.5 if hi <= lo else min(1.0, max(0.0, (value - lo) / (hi - lo)))
    pos = t * (len(VIRIDIS_STOPS) - 1)
    i = min(int(pos), len(VIRIDIS_STOPS) - 2)
    frac = pos - i
    a = _hex_to_rgb(VIRIDIS_STOPS[i])
    b = _hex_to_rgb(VIRIDIS_STOPS[i + 1])
    rgb = tuple(round(a[k] + frac * (b[k] - a[k])) for k in range(3))
    return "#%02x%02x%02x" % rgb


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# Geometry of one panel, in local panel coordinates (y down).
_TRI_SIDE = 320.0
_PAD_X = 60.0
_PAD_TOP = 34.0
_LEGEND_GAP = 30.0
_LEGEND_H = 12.0
_PAD_BOTTOM = 34.0

PANEL_W = _TRI_SIDE + 2 * _PAD_X
PANEL_H = _PAD_TOP + _TRI_SIDE * _SQRT3_2 + _LEGEND_GAP + _LEGEND_H + _PAD_BOTTOM


def _to_panel(xy: tuple[float, float]) -> tuple[float, float]:
    x, y = xy
    return (_PAD_X + x * _TRI_SIDE, _PAD_TOP + (_SQRT3_2 - y) * _TRI_SIDE)


def _panel_frame() -> list[str]:
    p1 = _to_panel((0.0, 0.0))
    p2 = _to_panel((1.0, 0.0))
    p3 = _to_panel((0.5, _SQRT3_2))
    m12 = _to_panel((0.5, 0.0))
    m23 = _to_panel((0.75, _SQRT3_2 / 2))
    m31 = _to_panel((0.25, _SQRT3_2 / 2))

    def path(points: list[tuple[float, float]]) -> str:
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        return f'<polygon points="{coords}" fill="none" stroke="#999999" stroke-width="1"/>'

    lines = [path([p1, p2, p3]), path([m12, m23, m31])]
    # Corner and midpoint labels: the three outer corners are all pure Indian;
    # the midpoints are the remaining pure-race corners of the central face.
    labels = [
        (p1, Race.INDIAN.label, "end", 14),
        (p2, Race.INDIAN.label, "start", 14),
        (p3, Race.INDIAN.label, "middle", -8),
        (m12, Race.AFRICAN.label, "middle", 16),
        (m23, Race.ASIAN.label, "start", -6),
        (m31, Race.CAUCASIAN.label, "end", -6),
    ]
    for (x, y), text, anchor, dy in labels:
        dx = {"start": 5, "end": -5, "middle": 0}[anchor]
        lines.append(
            f'<text x="{_fmt(x + dx)}" y="{_fmt(y + dy)}" text-anchor="{anchor}" '
            f'font-size="11" fill="#444444">{_esc(text)}</text>'
        )
    return lines


def _panel(
    title: str,
    markers: list[NetMarker],
    values: dict[RaceMix, float],
    index: int,
    point_radius: float,
) -> list[str]:
    missing = [m for m in markers if m.mix not in values]
    if missing:
        raise ValueError(
            f"panel {title!r}: no value for mix {missing[0].mix.to_strings()}"
        )
    lo = min(values[m.mix] for m in markers)
    hi = max(values[m.mix] for m in markers)

    lines = [
        f'<text x="{_fmt(PANEL_W / 2)}" y="20" text-anchor="middle" '
        f'font-size="14" fill="#222222">{_esc(title)}</text>'
    ]
    lines.extend(_panel_frame())
    for marker in markers:
        x, y = _to_panel(marker.xy)
        fill = color_for(values[marker.mix], lo, hi)
        lines.append(
            f'<circle class="pt" cx="{_fmt(x)}" cy="{_fmt(y)}" '
            f'r="{_fmt(point_radius)}" fill="{fill}" stroke="#333333" stroke-width="0.5"/>'
        )

    grad_id = f"ramp{index}"
    stops = "".join(
        f'<stop offset="{_fmt(i / (len(VIRIDIS_STOPS) - 1) * 100)}%" stop-color="{c}"/>'
        for i, c in enumerate(VIRIDIS_STOPS)
    )
    ly = _PAD_TOP + _TRI_SIDE * _SQRT3_2 + _LEGEND_GAP
    lines.append(f'<defs><linearGradient id="{grad_id}">{stops}</linearGradient></defs>')
    lines.append(
        f'<rect x="{_fmt(_PAD_X)}" y="{_fmt(ly)}" width="{_fmt(_TRI_SIDE)}" '
        f'height="{_fmt(_LEGEND_H)}" fill="url(#{grad_id})" stroke="#999999" stroke-width="0.5"/>'
    )
    ty = ly + _LEGEND_H + 14
    lines.append(
        f'<text x="{_fmt(_PAD_X)}" y="{_fmt(ty)}" text-anchor="start" '
        f'font-size="11" fill="#444444">{_fmt(lo)}</text>'
    )
    lines.append(
        f'<text x="{_fmt(_PAD_X + _TRI_SIDE)}" y="{_fmt(ty)}" text-anchor="end" '
        f'font-size="11" fill="#444444">{_fmt(hi)}</text>'
    )
    return lines


def net_panels_svg(
    panels: list[tuple[str, dict[RaceMix, float]]],
    markers: list[NetMarker],
    *,
    columns: int = 3,
    point_radius: float = 4.0,
) -> str:
    """Render metric panels over the net markers as one SVG document.

    `panels` pairs a title with a mix -> value mapping that must cover every
    marker's mix. Color is scaled per panel from its own min/max.
    """
    if not panels:
        raise ValueError("need at least one panel")
    if columns < 1:
        raise ValueError("columns must be >= 1")
    ncols = min(columns, len(panels))
    nrows = (len(panels) + ncols - 1) // ncols
    width = ncols * PANEL_W
    height = nrows * PANEL_H

    body: list[str] = []
    for idx, (title, values) in enumerate(panels):
        row, col = divmod(idx, ncols)
        tx = _fmt(col * PANEL_W)
        ty = _fmt(row * PANEL_H)
        slug = "".join(ch if ch.isalnum() else "-" for ch in title.lower())
        body.append(f'<g id="panel-{slug}" transform="translate({tx},{ty})">')
        body.extend(_panel(title, markers, values, idx, point_radius))
        body.append("</g>")

    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">'
    )
    background = f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>'
    return "\n".join([head, background, *body, "</svg>"]) + "\n"
