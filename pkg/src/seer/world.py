"""Multi-agent traffic episodes: intention scheduling, planning and tracking.

Planning decisions run at the log rate (every ``log_frequency`` ticks of
10 ms); between decisions each vehicle tracks its current path with the PID
controller through the tracking kernel.  Every decision tick emits one
:class:`SimFrame` per live vehicle carrying the label the vehicle was acting on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, InfeasibleIntentionError
from .planner import (IntentionLabel, IntentionSchedule, Path, PidGains, PidState, PlannerSettings,
                      PolicySettings, SCENES, lead_vehicle, plan_path, stop_trigger)
from .road import RoadModel, to_lane_frame
from .vehicle import Controls, VehiclePhysicsParams, VehicleState, spawn_traffic, step

log = logging.getLogger(__name__)

L = IntentionLabel


@dataclass(frozen=True)
class SimFrame:
    tick: int
    timestamp_ms: int
    agent_id: int
    state: VehicleState
    label: IntentionLabel
    scene: str = "highway"


@dataclass(frozen=True)
class WorldSettings:
    scene: str = "highway"
    agents: int = 8
    spawn_span: float = 500.0
    speed_range: tuple = (7.0, 9.5)
    speed_band: tuple = (6.0, 10.5)
    dt: float = 0.01
    log_frequency: int = 20  # decision / recording period in ticks of dt
    max_duration: float = 150.0
    end_margin: float = 10.0
    follow_range: float = 35.0
    lane_change_clearance: tuple = (15.0, 25.0)  # free space behind / ahead in the target lane
    signal_cycle: tuple = (20.0, 3.0, 12.0)  # green, yellow, red seconds (urban)
    stop_line_fraction: float = 0.5

    def __post_init__(self):
        if self.scene not in SCENES:
            raise ConfigError("scene", f"must be one of {SCENES}, got {self.scene!r}")
        if self.agents < 1:
            raise ConfigError("agents", "must be >= 1")
        if int(self.log_frequency) != self.log_frequency or self.log_frequency < 1:
            raise ConfigError("log_frequency", "must be a positive integer")
        if not 0 < self.dt <= 0.1:
            raise ConfigError("dt", "must lie in (0, 0.1]")
        lo, hi = self.speed_band
        if not 0 < lo < hi or not lo <= self.speed_range[0] <= self.speed_range[1] <= hi:
            raise ConfigError("speed_range", "must lie inside speed_band")

    @property
    def frame_period_ms(self) -> int:
        return int(round(self.log_frequency * self.dt * 1000))


@dataclass
class _Agent:
    id: int
    state: VehicleState
    schedule: IntentionSchedule
    cruise: float
    intention: IntentionLabel = L.LANE_KEEP
    path: Path | None = None
    pid: np.ndarray = field(default_factory=lambda: PidState().as_array())
    event_index: int = 0
    next_event: float = 0.0
    maneuver_end: float = 0.0
    target_speed: float = 0.0
    target_lane: int = -1
    passed_stop_line: bool = False


class World:
    """One seeded traffic episode on a straight road."""

    def __init__(self, road: RoadModel, seed: int, settings: WorldSettings | None = None,
                 physics: VehiclePhysicsParams | None = None, gains: PidGains | None = None,
                 planner: PlannerSettings | None = None, policy: PolicySettings | None = None,
                 initial: list[VehicleState] | None = None):
        self.road = road
        self.settings = settings or WorldSettings()
        self.physics = physics or VehiclePhysicsParams()
        self.gains = gains or PidGains()
        self.planner = planner or PlannerSettings()
        self.policy = policy or PolicySettings()
        self.seed = int(seed)
        self.tick = 0
        s = self.settings
        if s.scene == "urban" and road.stop_line_x is None:
            self.road = road = RoadModel(road.num_lanes_right, road.num_lanes_left, road.lane_width,
                                         road.road_length, road.road_length * s.stop_line_fraction)
        if initial is None:
            initial = spawn_traffic(road, s.agents, self.seed, s.speed_range,
                                    span=min(s.spawn_span, road.road_length))
        rng = np.random.default_rng([self.seed, 7])
        self.signal_offset = float(rng.uniform(0.0, sum(s.signal_cycle)))
        self.agents: list[_Agent] = []
        for i, st in enumerate(initial):
            sched = IntentionSchedule(self.seed, s.scene, self.policy, agent=i)
            agent = _Agent(i, st, sched, cruise=st.v_lon)
            agent.next_event = sched.event(0).dwell
            self.agents.append(agent)
        self.overrides: dict[int, Controls] = {}
        self._packed_gains = self.gains.packed()
        self._packed_params = self.physics.packed()

    @property
    def time(self) -> float:
        return self.tick * self.settings.dt

    def signal_state(self, t: float) -> str:
        green, yellow, red = self.settings.signal_cycle
        phase = (t + self.signal_offset) % (green + yellow + red)
        return "green" if phase < green else "yellow" if phase < green + yellow else "red"

    def snapshot(self) -> dict[int, VehicleState]:
        return {a.id: a.state for a in self.agents}

    # -- decisions -------------------------------------------------------------

    def _schedule_next(self, agent: _Agent, t: float):
        agent.next_event = t + agent.schedule.event(agent.event_index).dwell

    def _lane_clear(self, agent: _Agent, lane: int, others) -> bool:
        if not self.road.has_lane(lane):
            return False
        behind, ahead = self.settings.lane_change_clearance
        x = agent.state.x
        return all(not (self.road.lane_of(o.y) == lane and x - behind <= o.x <= x + ahead)
                   for o in others)

    def _start_event(self, agent: _Agent, t: float, others) -> None:
        ev = agent.schedule.event(agent.event_index)
        agent.event_index += 1
        if not self._begin(agent, ev.intention, ev.speed_change, t, others, mirror=True):
            self._schedule_next(agent, t)

    def _begin(self, agent: _Agent, intention: IntentionLabel, speed_change: float, t: float,
               others, mirror: bool, clearance: bool = True) -> bool:
        """Start a maneuver; lane changes need a free target lane (optionally the
        mirrored one), speed changes flip direction at the edge of the speed band."""
        lane = self.road.lane_of(agent.state.y)
        if intention.is_lane_change:
            step = 1 if intention is L.CHANGE_LANE_LEFT else -1
            options = [(intention, lane + step)]
            if mirror:
                options.append((L.CHANGE_LANE_LEFT if step < 0 else L.CHANGE_LANE_RIGHT, lane - step))
            for label, target in options:
                free = self._lane_clear(agent, target, others) if clearance else self.road.has_lane(target)
                if free:
                    agent.intention, agent.target_lane = label, target
                    length = self.planner.lane_change_distance + agent.state.v_lon * 8.0
                    path = plan_path(label, agent.state, self.road, others, self.planner, length=length)
                    agent.path = Path(np.column_stack([path.waypoints[:, :2],
                                                       np.full(len(path.waypoints), agent.cruise)]),
                                      label)
                    return True
            return False
        lo, hi = self.settings.speed_band
        up = intention is L.ACCELERATE
        if up and agent.cruise + 1.0 > hi:
            up = False
        elif not up and agent.cruise - 1.0 < lo:
            up = True
        target = min(agent.cruise + speed_change, hi) if up else max(agent.cruise - speed_change, lo)
        agent.intention = L.ACCELERATE if up else L.DECELERATE
        agent.target_speed = target
        agent.maneuver_end = t + abs(target - agent.cruise) / self.planner.acceleration
        agent.path = plan_path(agent.intention, agent.state, self.road, others, self.planner,
                               target_speed=target)
        return True

    def _decide(self, agent: _Agent, t: float, others: list[VehicleState]) -> None:
        road, st = self.road, agent.state
        if agent.intention.is_lane_change:
            lf = to_lane_frame(road, st.x, st.y, st.heading)
            if lf.lane_index == agent.target_lane and abs(lf.d) < self.policy.capture_tolerance:
                agent.intention = L.LANE_KEEP
                self._schedule_next(agent, t)
            else:
                return

        lane = road.lane_of(st.y)
        lead, gap = lead_vehicle(st, road, others, lane)
        light = None
        if road.stop_line_x is not None and not agent.passed_stop_line:
            if st.x > road.stop_line_x:
                agent.passed_stop_line = True
            elif road.stop_line_x - st.x <= self.planner.lookahead:
                light = self.signal_state(t)
                if light == "yellow" and road.stop_line_x - st.x < 10.0:
                    light = "green"
        corridor = plan_path(L.LANE_KEEP, st, road, (), self.planner)
        blocked = stop_trigger(st, corridor, others, "red" if light == "yellow" else light,
                               self.planner.lookahead)
        obstacle = lead is not None and gap <= self.planner.lookahead + 5.0 and lead.v_lon < 1.0
        following = lead is not None and gap < self.settings.follow_range and (
            st.v_lon > lead.v_lon + 0.3 or gap < self.planner.follow_gap)

        if blocked and (light in ("red", "yellow") or obstacle):
            agent.intention = L.STOP
        elif blocked or following:
            agent.intention = L.CAR_FOLLOW
        else:
            if agent.intention in (L.CAR_FOLLOW, L.STOP):
                agent.intention = L.LANE_KEEP
                agent.next_event = max(agent.next_event, t)
            elif agent.intention in (L.ACCELERATE, L.DECELERATE) and t >= agent.maneuver_end - 1e-9:
                agent.cruise = agent.target_speed
                agent.intention = L.LANE_KEEP
                self._schedule_next(agent, t)
            if agent.intention is L.LANE_KEEP and t >= agent.next_event:
                self._start_event(agent, t, others)
                if agent.intention.is_lane_change:
                    return

        label = agent.intention
        if label is L.LANE_KEEP:
            agent.path = plan_path(label, st, road, others, self.planner, target_speed=agent.cruise)
        elif label in (L.ACCELERATE, L.DECELERATE):
            agent.path = plan_path(label, st, road, others, self.planner, target_speed=agent.target_speed)
        else:
            agent.path = plan_path(label, st, road, others, self.planner)

    # -- stepping ----------------------------------------------------------------

    def step_frame(self) -> list[SimFrame]:
        """Decide, advance one log period and record.

        Each frame pairs the state sampled at the end of the period with the
        intention that was active while reaching it, i.e. the planner's label
        before it re-plans at that instant.
        """
        s = self.settings
        t = self.time
        states = [a.state for a in self.agents]
        for i, agent in enumerate(self.agents):
            self._decide(agent, t, states[:i] + states[i + 1:])
        for agent in self.agents:
            manual = self.overrides.pop(agent.id, None)
            if manual is not None:
                st = agent.state
                for _ in range(s.log_frequency):
                    st = step(st, manual, self.physics, s.dt)
                agent.state = st
                continue
            arr = agent.state.as_array()
            kernels.track(agent.path.waypoints, arr, agent.pid, self._packed_gains,
                          self._packed_params, s.dt, s.log_frequency)
            agent.state = VehicleState(*(float(v) for v in arr),
                                       agent.intention is L.CHANGE_LANE_LEFT,
                                       agent.intention is L.CHANGE_LANE_RIGHT)
        self.tick += s.log_frequency
        stamp = int(round(self.time * 1000))
        frames = [SimFrame(self.tick, stamp, a.id, a.state, a.intention, s.scene) for a in self.agents]
        limit = self.road.road_length - s.end_margin
        self.agents = [a for a in self.agents if a.state.x < limit]
        return frames

    def run(self) -> Iterator[list[SimFrame]]:
        while self.agents and self.time < self.settings.max_duration - 1e-9:
            yield self.step_frame()

    def force_intention(self, agent_id: int, intention: IntentionLabel, check_clearance: bool = True) -> None:
        """Scripted override: start ``intention`` now, bypassing the schedule.

        Lane changes require a free target lane unless ``check_clearance`` is
        off (used to stage risky cut-ins).  The situational behaviours (car
        following, stopping) cannot be forced.
        """
        agent = self._agent(agent_id)
        intention = IntentionLabel(intention)
        others = [a.state for a in self.agents if a is not agent]
        t = self.time
        if intention is L.LANE_KEEP:
            agent.intention = L.LANE_KEEP
            self._schedule_next(agent, t)
            return
        if not intention.trainable:
            raise ContractError(f"{intention.name} is situational and cannot be forced")
        if intention.is_lane_change and not self.road.has_lane(
                self.road.lane_of(agent.state.y) + (1 if intention is L.CHANGE_LANE_LEFT else -1)):
            raise InfeasibleIntentionError(f"agent {agent_id} has no lane for {intention.name}")
        if not self._begin(agent, intention, self.policy.speed_change[1], t, others, mirror=False,
                           clearance=check_clearance):
            raise InfeasibleIntentionError(f"target lane of agent {agent_id} is occupied")

    def override_controls(self, agent_id: int, controls: Controls) -> None:
        """Drive ``agent_id`` with fixed controls for the next log period."""
        self.overrides[self._agent(agent_id).id] = controls.clamped()

    def _agent(self, agent_id: int) -> _Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise ContractError(f"no live agent with id {agent_id}")


def simulate(road: RoadModel, seed: int, settings: WorldSettings | None = None,
             **kwargs) -> Iterator[SimFrame]:
    """Flatten an episode into a frame stream (all agents of a tick, then the next tick)."""
    world = World(road, seed, settings, **kwargs)
    for frames in world.run():
        yield from frames
