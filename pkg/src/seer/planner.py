"""Intention-labelled path generation and PID path tracking.

The planner produces the ground-truth labels for training: the raw label of a
vehicle at any instant is the intention whose path it is currently tracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .errors import ConfigError, InfeasibleIntentionError, OutOfBoundsError
from .road import RoadModel, to_lane_frame
from .vehicle import VEHICLE_LENGTH, VEHICLE_WIDTH, Controls, VehicleState


class IntentionLabel(IntEnum):
    LANE_KEEP = 0
    CHANGE_LANE_RIGHT = 1
    CHANGE_LANE_LEFT = 2
    DECELERATE = 3
    ACCELERATE = 4
    # raw-only behaviours, removed by cleaning before training
    CAR_FOLLOW = 5
    STOP = 6

    @property
    def trainable(self) -> bool:
        return self.value < NUM_CLASSES

    @property
    def is_lane_change(self) -> bool:
        return self in (IntentionLabel.CHANGE_LANE_LEFT, IntentionLabel.CHANGE_LANE_RIGHT)

    @property
    def display(self) -> str:
        return self.name.replace("_", " ").title()


NUM_CLASSES = 5
TRAINABLE = tuple(IntentionLabel(i) for i in range(NUM_CLASSES))


@dataclass(frozen=True, eq=False)
class Path:
    """Waypoints ``(x, y, target_speed)`` at fixed spacing."""

    waypoints: np.ndarray
    intention: IntentionLabel

    def __post_init__(self):
        wp = np.ascontiguousarray(self.waypoints, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
            raise ConfigError("path", f"need an (n>=2, 3) waypoint array, got shape {wp.shape}")
        spacing = np.hypot(np.diff(wp[:, 0]), np.diff(wp[:, 1]))
        if np.any(spacing <= 0) or np.any(spacing > 5.0 + 1e-9):
            raise ConfigError("path", "waypoint spacing must lie in (0, 5] m")
        if np.any(wp[:, 2] < 0):
            raise ConfigError("path", "target speeds must be non-negative")
        object.__setattr__(self, "waypoints", wp)

    @property
    def xy(self) -> np.ndarray:
        return self.waypoints[:, :2]

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(np.diff(self.waypoints[:, 0]), np.diff(self.waypoints[:, 1]))))

    @property
    def end(self) -> tuple[float, float]:
        return float(self.waypoints[-1, 0]), float(self.waypoints[-1, 1])


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.3
    ki: float = 0.01
    kd: float = 0.8
    integral_clamp: float = 5.0
    speed_gain: float = 0.5

    def __post_init__(self):
        for name in ("kp", "ki", "kd", "speed_gain"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "gains must be non-negative")
        if not self.integral_clamp > 0:
            raise ConfigError("integral_clamp", "must be positive")

    def packed(self) -> tuple:
        return (self.kp, self.ki, self.kd, self.integral_clamp, self.speed_gain)


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.integral, 0.0 if self.prev_error is None else self.prev_error,
                         0.0 if self.prev_error is None else 1.0])

    @classmethod
    def from_array(cls, arr) -> PidState:
        return cls(float(arr[0]), float(arr[1]) if arr[2] else None)


@dataclass(frozen=True)
class PlannerSettings:
    lane_change_distance: float = 35.0
    acceleration: float = 2.0
    follow_gap: float = 20.0
    follow_gain: float = 0.3
    spacing: float = 1.0
    min_length: float = 40.0
    horizon: float = 4.0
    lookahead: float = 30.0
    stop_margin: float = 3.0

    def __post_init__(self):
        for name in ("lane_change_distance", "acceleration", "follow_gap", "min_length",
                     "horizon", "lookahead"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if not 0 < self.spacing <= 5:
            raise ConfigError("spacing", "must lie in (0, 5] m")


def smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def lead_vehicle(state: VehicleState, road: RoadModel, traffic, lane: int | None = None):
    """Nearest vehicle ahead in ``lane`` (default: ego's lane) as ``(vehicle, gap)``."""
    lane = road.lane_of(state.y) if lane is None else lane
    best, best_gap = None, math.inf
    for other in traffic:
        if road.lane_of(other.y) != lane or other.x <= state.x:
            continue
        gap = other.x - state.x
        if gap < best_gap:
            best, best_gap = other, gap
    return best, best_gap


def plan_path(intention: IntentionLabel, state: VehicleState, road: RoadModel, traffic=(),
              settings: PlannerSettings | None = None, *, length: float | None = None,
              target_speed: float | None = None) -> Path:
    """Waypoints realising ``intention`` from the vehicle's current position.

    ``target_speed`` overrides the cruise speed of lane keeping and the end
    speed of acceleration and deceleration ramps.
    """
    settings = settings or PlannerSettings()
    intention = IntentionLabel(intention)
    lf = to_lane_frame(road, state.x, state.y, state.heading)
    lane = lf.lane_index
    v0 = state.v_lon
    if length is None:
        length = max(settings.min_length, v0 * settings.horizon)
    if intention.is_lane_change:
        target_lane = lane + (1 if intention is IntentionLabel.CHANGE_LANE_LEFT else -1)
        if not road.has_lane(target_lane):
            side = "left" if intention is IntentionLabel.CHANGE_LANE_LEFT else "right"
            raise InfeasibleIntentionError(f"no lane to the {side} of lane {lane}")
        length = max(length, settings.lane_change_distance + settings.spacing)

    s0 = state.x
    n = int(math.floor(length / settings.spacing + 1e-9)) + 1
    s = s0 + np.arange(n) * settings.spacing
    s = s[s <= road.road_length]
    if len(s) < 2:
        if road.road_length - s0 <= 1e-6:
            raise OutOfBoundsError(f"no room to plan at x={s0:.2f}")
        s = np.array([s0, road.road_length])
    travelled = s - s0

    y0 = road.lane_center(lane)
    if intention.is_lane_change:
        y1 = road.lane_center(target_lane)
        u = np.clip(travelled / settings.lane_change_distance, 0.0, 1.0)
        y = y0 + (y1 - y0) * smoothstep(u)
    else:
        y = np.full_like(s, y0)

    a = settings.acceleration
    if intention is IntentionLabel.ACCELERATE:
        cap = v0 + a * settings.horizon if target_speed is None else target_speed
        v = np.minimum(np.sqrt(v0 * v0 + 2.0 * a * travelled), max(cap, v0))
    elif intention is IntentionLabel.DECELERATE:
        floor = max(v0 - a * settings.horizon, 0.0) if target_speed is None else target_speed
        v = np.maximum(np.sqrt(np.maximum(v0 * v0 - 2.0 * a * travelled, 0.0)), min(floor, v0))
    elif intention is IntentionLabel.CAR_FOLLOW:
        lead, gap = lead_vehicle(state, road, traffic, lane)
        if lead is None:
            v_t = v0
        else:
            v_t = lead.v_lon + settings.follow_gain * (gap - settings.follow_gap)
            v_t = min(max(v_t, 0.0), max(v0, lead.v_lon))
        v = np.full_like(s, v_t)
    elif intention is IntentionLabel.STOP:
        s_stop = s0 + (v0 * v0) / (2.0 * a)
        lead, gap = lead_vehicle(state, road, traffic, lane)
        if lead is not None:
            s_stop = min(s_stop, lead.x - VEHICLE_LENGTH - settings.stop_margin)
        if road.stop_line_x is not None and road.stop_line_x >= s0:
            s_stop = min(s_stop, road.stop_line_x - settings.stop_margin)
        span = s_stop - s0
        if span <= 0:
            v = np.zeros_like(s)
        else:
            v = v0 * np.sqrt(np.clip((s_stop - s) / span, 0.0, 1.0))
    else:
        v = np.full_like(s, v0 if target_speed is None else target_speed)
    return Path(np.column_stack([s, y, v]), intention)


# -- stop trigger --------------------------------------------------------------

def _rect(cx, cy, heading, half_len, half_wid):
    c, s = math.cos(heading), math.sin(heading)
    return (cx, cy), ((c, s), (-s, c)), (half_len, half_wid)


def rects_overlap(a, b) -> bool:
    """Separating-axis test for two oriented rectangles ``(centre, axes, half_extents)``."""
    (ax, ay), axes_a, ha = a
    (bx, by), axes_b, hb = b
    dx, dy = bx - ax, by - ay
    for ux, uy in (*axes_a, *axes_b):
        ra = sum(h * abs(px * ux + py * uy) for h, (px, py) in zip(ha, axes_a))
        rb = sum(h * abs(px * ux + py * uy) for h, (px, py) in zip(hb, axes_b))
        if abs(dx * ux + dy * uy) > ra + rb:
            return False
    return True


def footprint(state: VehicleState):
    return _rect(state.x, state.y, state.heading, VEHICLE_LENGTH / 2, VEHICLE_WIDTH / 2)


def corridor_segments(state: VehicleState, path: Path, lookahead: float):
    """Oriented rectangles covering the path from the ego's nearest waypoint onwards."""
    xy = path.xy
    start = int(np.argmin(np.hypot(xy[:, 0] - state.x, xy[:, 1] - state.y)))
    rects, travelled = [], 0.0
    for i in range(start, len(xy) - 1):
        if travelled >= lookahead:
            break
        (x0, y0), (x1, y1) = xy[i], xy[i + 1]
        seg = math.hypot(x1 - x0, y1 - y0)
        use = min(seg, lookahead - travelled)
        heading = math.atan2(y1 - y0, x1 - x0)
        cx = x0 + 0.5 * use * math.cos(heading)
        cy = y0 + 0.5 * use * math.sin(heading)
        rects.append(_rect(cx, cy, heading, use / 2, VEHICLE_WIDTH / 2))
        travelled += seg
    return rects


def stop_trigger(state: VehicleState, path: Path, traffic, light: str | None = None,
                 lookahead: float = 30.0) -> bool:
    """True when a vehicle blocks the path corridor within ``lookahead`` metres
    or the signal governing the ego's lane is red."""
    if light == "red":
        return True
    if not traffic:
        return False
    corridor = corridor_segments(state, path, lookahead)
    if not corridor:
        return False
    # nothing farther than the corridor reach plus a footprint diagonal can touch it
    (sx, sy), _, _ = corridor[0]
    reach = lookahead + math.hypot(sx - state.x, sy - state.y) + VEHICLE_LENGTH + VEHICLE_WIDTH
    for other in traffic:
        if math.hypot(other.x - state.x, other.y - state.y) > reach:
            continue
        fp = footprint(other)
        if any(rects_overlap(seg, fp) for seg in corridor):
            return True
    return False


# -- PID tracking ------------------------------------------------------------------

def cross_track(path: Path, x: float, y: float) -> tuple[float, float]:
    """Signed cross-track error and interpolated target speed at the nearest segment.

    The error is positive when the path lies to the left of the vehicle, so a
    positive steering command reduces it.
    """
    wp = path.waypoints
    ax, ay = wp[:-1, 0], wp[:-1, 1]
    dx, dy = wp[1:, 0] - ax, wp[1:, 1] - ay
    seg2 = dx * dx + dy * dy
    t = ((x - ax) * dx + (y - ay) * dy) / seg2
    t = np.minimum(np.maximum(t, 0.0), 1.0)
    qx, qy = ax + t * dx, ay + t * dy
    dist2 = (x - qx) * (x - qx) + (y - qy) * (y - qy)
    i = int(np.argmin(dist2))
    sdx, sdy, ti = float(dx[i]), float(dy[i]), float(t[i])
    cross = sdx * (y - float(ay[i])) - sdy * (x - float(ax[i]))
    error = -cross / math.sqrt(float(seg2[i]))
    va, vb = float(wp[i, 2]), float(wp[i + 1, 2])
    return error, va + ti * (vb - va)


def _pid_update(error, v_target, v, integral, prev_error, has_prev, gains, dt):
    """Scalar controller law shared by ``pid_control`` and the tracking kernels.

    Returns ``(throttle, brake, steer, integral)``.
    """
    kp, ki, kd, clamp, speed_gain = gains
    integral = integral + error * dt
    if integral > clamp:
        integral = clamp
    elif integral < -clamp:
        integral = -clamp
    derivative = (error - prev_error) / dt if has_prev else 0.0
    c = kp * error + ki * integral + kd * derivative
    steer = -1.0 if c < -1.0 else 1.0 if c > 1.0 else c
    dv = speed_gain * (v_target - v)
    throttle = 0.0 if dv < 0.0 else 1.0 if dv > 1.0 else dv
    brake = 0.0 if -dv < 0.0 else 1.0 if -dv > 1.0 else -dv
    return throttle, brake, steer, integral


def pid_control(path: Path, state: VehicleState, gains: PidGains, pid: PidState,
                dt: float) -> tuple[Controls, PidState]:
    """One controller update: steering from the cross-track PID law, pedals from
    a proportional law on the speed error."""
    if not dt > 0:
        raise ConfigError("dt", "must be positive")
    error, v_target = cross_track(path, state.x, state.y)
    has_prev = pid.prev_error is not None
    throttle, brake, steer, integral = _pid_update(
        error, v_target, state.v_lon, pid.integral, pid.prev_error if has_prev else 0.0,
        has_prev, gains.packed(), dt)
    controls = Controls(throttle, brake, 0.0, steer,
                        path.intention is IntentionLabel.CHANGE_LANE_LEFT,
                        path.intention is IntentionLabel.CHANGE_LANE_RIGHT)
    return controls, PidState(integral, error)


# -- intention schedule ----------------------------------------------------------

SCENES = ("highway", "urban")


@dataclass(frozen=True)
class PolicySettings:
    """Random intention schedule: exponential lane-keep dwell, then a maneuver."""

    transition_rate: float = 0.12  # per second spent in lane keeping
    weights: dict = field(default_factory=lambda: {
        IntentionLabel.CHANGE_LANE_RIGHT: 0.44,
        IntentionLabel.CHANGE_LANE_LEFT: 0.44,
        IntentionLabel.DECELERATE: 0.06,
        IntentionLabel.ACCELERATE: 0.06,
    })
    speed_change: tuple = (1.5, 3.0)  # m/s for accelerate / decelerate maneuvers
    nominal_lane_change: float = 4.5  # s, open-loop schedule only
    capture_tolerance: float = 0.2  # m, lane-change completion

    def __post_init__(self):
        if not self.transition_rate > 0:
            raise ConfigError("transition_rate", "must be positive")
        weights = {IntentionLabel(k): float(v) for k, v in self.weights.items()}
        if any(not k.trainable or k is IntentionLabel.LANE_KEEP for k in weights):
            raise ConfigError("weights", "only maneuver classes 1-4 can be scheduled")
        if any(v < 0 for v in weights.values()) or sum(weights.values()) <= 0:
            raise ConfigError("weights", "must be non-negative with a positive sum")
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class ScheduledEvent:
    dwell: float  # lane keeping before the maneuver, seconds
    intention: IntentionLabel
    speed_change: float  # m/s, accelerate / decelerate only


class IntentionSchedule:
    """Deterministic, lazily extended stream of scheduled maneuvers for one agent."""

    def __init__(self, seed: int, scene: str = "highway", settings: PolicySettings | None = None,
                 agent: int = 0):
        if scene not in SCENES:
            raise ConfigError("scene", f"unknown scene {scene!r}")
        self.settings = settings or PolicySettings()
        self._rng = np.random.default_rng([int(seed), SCENES.index(scene), int(agent)])
        items = sorted(self.settings.weights.items())
        self._labels = [k for k, _ in items]
        p = np.array([v for _, v in items])
        self._p = p / p.sum()
        self._events: list[ScheduledEvent] = []

    def event(self, i: int) -> ScheduledEvent:
        while len(self._events) <= i:
            rng = self._rng
            dwell = float(rng.exponential(1.0 / self.settings.transition_rate))
            label = self._labels[int(rng.choice(len(self._labels), p=self._p))]
            lo, hi = self.settings.speed_change
            self._events.append(ScheduledEvent(dwell, label, float(rng.uniform(lo, hi))))
        return self._events[i]

    def nominal_duration(self, ev: ScheduledEvent, acceleration: float) -> float:
        if ev.intention.is_lane_change:
            return self.settings.nominal_lane_change
        return ev.speed_change / acceleration

    def label_at(self, t: float, acceleration: float = 2.0) -> IntentionLabel:
        """Open-loop label at time ``t`` using nominal maneuver durations."""
        cursor, i = 0.0, 0
        while True:
            ev = self.event(i)
            cursor += ev.dwell
            if t < cursor:
                return IntentionLabel.LANE_KEEP
            cursor += self.nominal_duration(ev, acceleration)
            if t < cursor:
                return ev.intention
            i += 1


@lru_cache(maxsize=64)
def _schedule(seed: int, scene: str) -> IntentionSchedule:
    return IntentionSchedule(seed, scene)


def scenario_policy(seed: int, scene: str, t: float) -> IntentionLabel:
    """Scheduled raw intention at time ``t`` for the default policy settings."""
    return _schedule(int(seed), scene).label_at(t)
