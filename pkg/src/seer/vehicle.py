"""Desk-scale vehicle dynamics: kinematic bicycle with force-capped acceleration.

The longitudinal model converts the configured torques into an effective
drive force, caps every tyre force by a slip-limited grip force and scales
it by the traction coefficient::

    grip   = forward_slip_limit * slip_stiffness
    drive  = traction * min(throttle * force_per_torque * engine_torque, grip)
    brake  = traction * min((brake + 3 * hand_brake) * braking_force, grip)
    v'     = clamp(v + (drive - brake) / mass * dt, 0, max_speed)

Coasting keeps the current speed (no drag term), so with constant throttle
the speed grows linearly until it saturates at ``max_speed``.  Lateral motion
follows a centre-of-gravity bicycle with the CG midway between the axles.
The tyre angle lags the steering command through a first-order actuator
(time constant ``steer_time_constant``); without the lag the CG slip angle
would feed the command straight into lateral velocity.  The yaw rate is
limited so that lateral acceleration never exceeds the
sideways grip ``traction * sideway_slip_limit * slip_stiffness / mass``.
All updates are explicit Euler.

The scalar arithmetic below is mirrored operation-for-operation by the
compiled tracking kernel, so both produce bit-identical trajectories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CapacityError, ConfigError
from .road import RoadModel

log = logging.getLogger(__name__)

HAND_BRAKE_RATIO = 3.0  # 4425 / 1475 lb-ft
CG_RATIO = 0.5  # rear axle to CG distance over wheelbase
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8


@dataclass(frozen=True)
class VehiclePhysicsParams:
    engine_torque: float = 590.0
    brake_torque: float = 1475.0  # kept for parity; braking uses braking_force
    braking_force: float = 15000.0
    mass: float = 50.0
    forward_slip_limit: float = 0.1
    sideway_slip_limit: float = 0.1
    traction: float = 0.5
    max_speed: float = 30.0
    wheelbase: float = 2.7
    max_steer: float = 0.6
    force_per_torque: float = 0.5
    slip_stiffness: float = 5000.0
    steer_time_constant: float = 0.2

    def __post_init__(self):
        for name in ("engine_torque", "brake_torque", "braking_force", "mass", "max_speed",
                     "wheelbase", "max_steer", "force_per_torque", "slip_stiffness",
                     "steer_time_constant"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be positive, got {getattr(self, name)}")
        for name in ("forward_slip_limit", "sideway_slip_limit", "traction"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigError(name, f"must lie in (0, 1], got {value}")

    @property
    def grip_force(self) -> float:
        return self.forward_slip_limit * self.slip_stiffness

    @property
    def max_acceleration(self) -> float:
        return self.traction * min(self.force_per_torque * self.engine_torque, self.grip_force) / self.mass

    @property
    def max_deceleration(self) -> float:
        return self.traction * min(self.braking_force, self.grip_force) / self.mass

    @property
    def max_lateral_acceleration(self) -> float:
        return self.traction * self.sideway_slip_limit * self.slip_stiffness / self.mass

    def packed(self) -> tuple:
        """Flat parameter tuple consumed by the tracking kernels."""
        return (self.wheelbase, self.max_steer, self.traction, self.grip_force,
                self.force_per_torque * self.engine_torque, self.braking_force,
                self.mass, self.max_speed, self.max_lateral_acceleration,
                self.steer_time_constant)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float = 0.0
    v_lon: float = 0.0
    v_lat: float = 0.0
    tire_angle: float = 0.0
    signal_left: bool = False
    signal_right: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.v_lon, self.v_lat, self.tire_angle])

    def with_array(self, arr) -> VehicleState:
        return replace(self, x=float(arr[0]), y=float(arr[1]), heading=float(arr[2]),
                       v_lon=float(arr[3]), v_lat=float(arr[4]), tire_angle=float(arr[5]))


@dataclass(frozen=True)
class Controls:
    throttle: float = 0.0
    brake: float = 0.0
    hand_brake: float = 0.0
    steer: float = 0.0
    signal_left: bool = False
    signal_right: bool = False

    def clamped(self) -> Controls:
        c = Controls(_clamp(self.throttle, 0.0, 1.0), _clamp(self.brake, 0.0, 1.0),
                     _clamp(self.hand_brake, 0.0, 1.0), _clamp(self.steer, -1.0, 1.0),
                     bool(self.signal_left), bool(self.signal_right))
        if c != self:
            log.debug("clamped controls %s -> %s", self, c)
        return c


def _clamp(value, lo, hi):
    return lo if value < lo else hi if value > hi else value


def _advance(x, y, heading, v, delta, throttle, brake, hand_brake, steer, p, dt):
    """Scalar Euler update on packed parameters ``p`` (see ``packed``)."""
    (wheelbase, max_steer, traction, grip, engine_force, braking_force, mass, max_speed,
     lat_limit, steer_tau) = p
    tan_d = math.tan(delta)
    beta = math.atan(CG_RATIO * tan_d)
    omega = v * math.cos(beta) * tan_d / wheelbase
    if abs(v * omega) > lat_limit:
        omega = math.copysign(lat_limit / v, omega)
    x_new = x + v * math.cos(heading + beta) * dt
    y_new = y + v * math.sin(heading + beta) * dt
    heading_new = heading + omega * dt
    delta_new = delta + (steer * max_steer - delta) * (dt / steer_tau)
    drive = traction * min(throttle * engine_force, grip)
    braking = traction * min((brake + HAND_BRAKE_RATIO * hand_brake) * braking_force, grip)
    v_new = v + (drive - braking) / mass * dt
    v_new = _clamp(v_new, 0.0, max_speed)
    v_lat = v_new * math.sin(math.atan(CG_RATIO * math.tan(delta_new)))
    return x_new, y_new, heading_new, v_new, v_lat, delta_new


def step(state: VehicleState, controls: Controls, params: VehiclePhysicsParams, dt: float) -> VehicleState:
    """Advance one vehicle by ``dt`` seconds."""
    if not 0 < dt <= 0.1:
        raise ConfigError("dt", f"must lie in (0, 0.1], got {dt}")
    c = controls.clamped()
    out = _advance(state.x, state.y, state.heading, state.v_lon, state.tire_angle, c.throttle,
                   c.brake, c.hand_brake, c.steer, params.packed(), dt)
    return VehicleState(*out, c.signal_left, c.signal_right)


def spawn_traffic(road: RoadModel, n: int, seed: int, speed_range=(7.0, 9.5),
                  min_gap: float = 10.0, span: float | None = None) -> list[VehicleState]:
    """Place ``n`` vehicles on lane centres within the first ``span`` metres.

    Lane occupancy is balanced (counts differ by at most one) and same-lane
    centre-to-centre gaps are at least ``min_gap``.
    """
    if n < 1:
        raise ConfigError("agents", f"must be >= 1, got {n}")
    span = road.road_length if span is None else min(span, road.road_length)
    lanes = road.num_lanes_right
    per_lane = -(-n // lanes)
    if (per_lane - 1) * min_gap > span:
        raise CapacityError(f"{n} vehicles need {(per_lane - 1) * min_gap:.0f} m per lane, "
                            f"road offers {span:.0f} m")
    rng = np.random.default_rng(seed)
    counts = [n // lanes] * lanes
    for k in rng.choice(lanes, size=n % lanes, replace=False):
        counts[int(k)] += 1
    states = []
    for lane, m in enumerate(counts):
        if m == 0:
            continue
        slack = span - (m - 1) * min_gap
        xs = np.sort(rng.uniform(0.0, slack, m)) + np.arange(m) * min_gap
        speeds = rng.uniform(speed_range[0], speed_range[1], m)
        y = road.lane_center(lane)
        states.extend(VehicleState(float(x), y, 0.0, float(v)) for x, v in zip(xs, speeds))
    return states
