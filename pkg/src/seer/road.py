"""Straight multi-lane road geometry and lane-frame (Frenet) conversion.

World frame: ``x`` runs along the road from 0 to ``road_length``; ``y`` is the
lateral offset from the rightmost road boundary, increasing to the left.
Driving lanes are numbered from the right starting at 0, so lane ``k`` is
centred at ``(k + 0.5) * lane_width``.  Lanes of the opposite carriageway
(``num_lanes_left``) sit beyond the driving lanes; they are kept for
configuration parity and rendering only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, OutOfBoundsError


def wrap_angle(angle: float) -> float:
    """Wrap ``angle`` to the half-open interval (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class LaneFrame:
    s: float
    d: float
    lane_index: int
    heading_rel: float


@dataclass(frozen=True)
class RoadModel:
    num_lanes_right: int
    num_lanes_left: int
    lane_width: float
    road_length: float
    # Urban variant: a stop line across the driving lanes at this x, or None.
    stop_line_x: float | None = None

    def __post_init__(self):
        if int(self.num_lanes_right) != self.num_lanes_right or self.num_lanes_right < 1:
            raise ConfigError("num_lane_right", f"must be a positive integer, got {self.num_lanes_right}")
        if int(self.num_lanes_left) != self.num_lanes_left or self.num_lanes_left < 0:
            raise ConfigError("num_lane_left", f"must be a non-negative integer, got {self.num_lanes_left}")
        if not self.lane_width > 0:
            raise ConfigError("lane_width", f"must be positive, got {self.lane_width}")
        if not self.road_length > 0:
            raise ConfigError("road_length", f"must be positive, got {self.road_length}")
        if self.stop_line_x is not None and not 0 < self.stop_line_x < self.road_length:
            raise ConfigError("stop_line_x", "must lie strictly inside the road")

    @property
    def driving_width(self) -> float:
        return self.num_lanes_right * self.lane_width

    @property
    def total_width(self) -> float:
        return (self.num_lanes_right + self.num_lanes_left) * self.lane_width

    def lane_center(self, lane_index: int) -> float:
        if not 0 <= lane_index < self.num_lanes_right:
            raise OutOfBoundsError(f"lane {lane_index} does not exist")
        return (lane_index + 0.5) * self.lane_width

    def lane_centers(self) -> list[float]:
        return [(k + 0.5) * self.lane_width for k in range(self.num_lanes_right)]

    def lane_markers(self) -> list[float]:
        """Lateral offsets of every lane marker, opposite carriageway included."""
        n = self.num_lanes_right + self.num_lanes_left
        return [k * self.lane_width for k in range(n + 1)]

    def has_lane(self, lane_index: int) -> bool:
        return 0 <= lane_index < self.num_lanes_right

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.road_length and 0.0 <= y <= self.driving_width

    def lane_of(self, y: float) -> int:
        """Nearest driving lane to lateral offset ``y``; boundary ties go to the lower index."""
        k = math.ceil(y / self.lane_width) - 1
        return min(max(k, 0), self.num_lanes_right - 1)


def build_straight_highway(num_lanes_right: int, num_lanes_left: int, lane_width: float,
                           road_length: float, stop_line_x: float | None = None) -> RoadModel:
    return RoadModel(num_lanes_right, num_lanes_left, float(lane_width), float(road_length),
                     None if stop_line_x is None else float(stop_line_x))


def to_lane_frame(road: RoadModel, x: float, y: float, heading: float) -> LaneFrame:
    if not road.contains(x, y):
        raise OutOfBoundsError(f"point ({x:.3f}, {y:.3f}) is outside the road corridor")
    k = road.lane_of(y)
    d = y - (k + 0.5) * road.lane_width
    return LaneFrame(s=x, d=d, lane_index=k, heading_rel=wrap_angle(heading))


def from_lane_frame(road: RoadModel, lf: LaneFrame) -> tuple[float, float, float]:
    if not road.has_lane(lf.lane_index):
        raise OutOfBoundsError(f"lane {lf.lane_index} does not exist")
    y = (lf.lane_index + 0.5) * road.lane_width + lf.d
    return lf.s, y, lf.heading_rel
