"""Static top-down scene snapshots in the spirit of a skeleton renderer."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .planner import IntentionLabel
from .road import RoadModel
from .vehicle import VEHICLE_LENGTH, VEHICLE_WIDTH

COLORS = {0: "#4a90d9", 1: "#e67e22", 2: "#27ae60", 3: "#8e44ad", 4: "#c0392b", None: "#7f8c8d"}


def render_svg(road: RoadModel, states: dict, predictions: dict | None = None,
               paths: dict | None = None, flags=(), window: tuple | None = None,
               title: str = "", scale: float = 6.0, cell_length: float = 5.0) -> str:
    """SVG of a road window: lanes, vehicles coloured by predicted intention,
    projected paths and flagged risk cells.

    ``window`` is ``(x_min, x_max)`` in metres; by default it spans the vehicles.
    """
    predictions = predictions or {}
    paths = paths or {}
    if window is None:
        xs = [s.x for s in states.values()] or [0.0]
        window = (max(0.0, min(xs) - 20.0), min(road.road_length, max(xs) + 60.0))
    x0, x1 = window
    width_m = road.total_width
    w, h = (x1 - x0) * scale, width_m * scale + 30

    def px(x):
        return (x - x0) * scale

    def py(y):
        return 20 + (width_m - y) * scale  # y grows to the left, i.e. upwards

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
           f'viewBox="0 0 {w:.1f} {h:.1f}">',
           f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}" fill="#ffffff"/>',
           f'<text x="4" y="14" font-family="monospace" font-size="12">{escape(title)}</text>',
           f'<rect x="0" y="{py(width_m):.1f}" width="{w:.1f}" height="{width_m * scale:.1f}" fill="#3b3b3b"/>']
    for k, y in enumerate(road.lane_markers()):
        solid = k in (0, road.num_lanes_right, road.num_lanes_right + road.num_lanes_left)
        dash = "" if solid else ' stroke-dasharray="12,10"'
        color = "#f1c40f" if k == road.num_lanes_right and road.num_lanes_left else "#ecf0f1"
        out.append(f'<line x1="0" y1="{py(y):.1f}" x2="{w:.1f}" y2="{py(y):.1f}" '
                   f'stroke="{color}" stroke-width="1.5"{dash}/>')
    if road.stop_line_x is not None and x0 <= road.stop_line_x <= x1:
        out.append(f'<line x1="{px(road.stop_line_x):.1f}" y1="{py(0):.1f}" '
                   f'x2="{px(road.stop_line_x):.1f}" y2="{py(road.driving_width):.1f}" '
                   f'stroke="#ffffff" stroke-width="3"/>')
    for f in flags:
        lane, bucket = f.cell
        cx0 = bucket * cell_length
        out.append(f'<rect class="risk" x="{px(cx0):.1f}" y="{py((lane + 1) * road.lane_width):.1f}" '
                   f'width="{cell_length * scale:.1f}" height="{road.lane_width * scale:.1f}" '
                   f'fill="#e74c3c" fill-opacity="0.45"/>')
    for aid, path in paths.items():
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in path.xy)
        color = COLORS.get(predictions.get(aid), COLORS[None])
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2" '
                   f'stroke-dasharray="4,3"/>')
    for aid, st in sorted(states.items()):
        pred = predictions.get(aid)
        color = COLORS.get(pred, COLORS[None])
        angle = -math.degrees(st.heading)
        out.append(f'<g class="vehicle" transform="translate({px(st.x):.1f},{py(st.y):.1f}) '
                   f'rotate({angle:.2f})">'
                   f'<rect x="{-VEHICLE_LENGTH * scale / 2:.1f}" y="{-VEHICLE_WIDTH * scale / 2:.1f}" '
                   f'width="{VEHICLE_LENGTH * scale:.1f}" height="{VEHICLE_WIDTH * scale:.1f}" '
                   f'fill="{color}" stroke="#000000" stroke-width="0.8"/></g>')
        label = f"{aid}" if pred is None else f"{aid}: {IntentionLabel(pred).display}"
        out.append(f'<text x="{px(st.x):.1f}" y="{py(st.y) - VEHICLE_WIDTH * scale:.1f}" '
                   f'font-family="monospace" font-size="10" fill="#ffffff">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, *args, **kwargs) -> None:
    with open(path, "w") as fh:
        fh.write(render_svg(*args, **kwargs))
