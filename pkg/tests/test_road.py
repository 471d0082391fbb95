import math

import numpy as np
import pytest

from seer.errors import ConfigError, OutOfBoundsError
from seer.road import LaneFrame, build_straight_highway, from_lane_frame, to_lane_frame, wrap_angle


def test_default_lane_centres(road):
    assert road.lane_centers() == pytest.approx([3.25, 9.75, 16.25], abs=0)
    assert np.allclose(np.diff(road.lane_centers()), road.lane_width)


def test_single_lane():
    r = build_straight_highway(1, 0, 4.0, 100)
    assert r.lane_center(0) == 2.0
    assert r.lane_markers() == [0.0, 4.0]


@pytest.mark.parametrize("args,field", [((0, 0, 6.5, 1000), "num_lane_right"),
                                        ((3, -1, 6.5, 1000), "num_lane_left"),
                                        ((3, 3, 0.0, 1000), "lane_width"),
                                        ((3, 3, 6.5, -5), "road_length")])
def test_invalid_dimensions(args, field):
    with pytest.raises(ConfigError) as err:
        build_straight_highway(*args)
    assert err.value.field == field


def test_on_centre_point(road):
    lf = to_lane_frame(road, 120.0, road.lane_center(1), 0.0)
    assert (lf.d, lf.heading_rel, lf.lane_index, lf.s) == (0.0, 0.0, 1, 120.0)


def test_boundary_tie_goes_to_lower_lane(road):
    lf = to_lane_frame(road, 10.0, road.lane_width, 0.0)
    assert lf.lane_index == 0
    assert abs(lf.d) == road.lane_width / 2


def test_endpoints(road):
    assert from_lane_frame(road, LaneFrame(0.0, 0.0, 0, 0.0)) == (0.0, 3.25, 0.0)
    assert from_lane_frame(road, LaneFrame(1000.0, 0.0, 0, 0.0)) == (1000.0, 3.25, 0.0)


def test_out_of_bounds(road):
    with pytest.raises(OutOfBoundsError):
        to_lane_frame(road, -1.0, 3.0, 0.0)
    with pytest.raises(OutOfBoundsError):
        to_lane_frame(road, 10.0, road.driving_width + 0.01, 0.0)


def test_roundtrip_and_argmin_lane(road, rng):
    centres = np.array(road.lane_centers())
    for _ in range(1000):
        x = rng.uniform(0, road.road_length)
        y = rng.uniform(0, road.driving_width)
        h = rng.uniform(-math.pi, math.pi)
        lf = to_lane_frame(road, x, y, h)
        # exhaustive nearest-centre oracle, lower index on ties
        dist = np.abs(centres - y)
        assert lf.lane_index == int(np.flatnonzero(dist == dist.min())[0])
        x2, y2, h2 = from_lane_frame(road, lf)
        assert abs(x2 - x) <= 1e-9 and abs(y2 - y) <= 1e-9
        assert abs(wrap_angle(h2 - h)) <= 1e-12
        assert -math.pi < lf.heading_rel <= math.pi


def test_wrap_angle_interval():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.25 + 4 * math.pi) == pytest.approx(0.25)
