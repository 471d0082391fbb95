"""Scripted demo scenarios, prediction logs and the telemetry serving loop."""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SeerError
from .infer import InferenceLoop, TickResult
from .planner import NUM_CLASSES, IntentionLabel, PolicySettings
from .road import RoadModel
from .stream import ControlMessage, TelemetryServer, frame_message
from .svg import write_svg
from .vehicle import Controls, VehicleState
from .world import World, WorldSettings

log = logging.getLogger(__name__)

L = IntentionLabel
QUIET_POLICY = PolicySettings(transition_rate=1e-9)  # no scheduled maneuvers in scripted scenes


@dataclass
class Scenario:
    name: str
    initial: list  # VehicleState per agent
    events: list  # (frame index, agent id, intention, check clearance)
    frames: int
    focus: int = 0


def lane_change_scenario(road: RoadModel, T: int = 12, speed: float = 8.0) -> Scenario:
    """One vehicle cruising in the second lane, then changing left."""
    if road.num_lanes_right < 2:
        raise ConfigError("num_lane_right", "the lane-change scenario needs at least two lanes")
    lane = 1 if road.num_lanes_right >= 3 else 0
    warm = T + 8
    return Scenario("lane_change", [VehicleState(40.0, road.lane_center(lane), 0.0, speed)],
                    [(warm, 0, L.CHANGE_LANE_LEFT, True)], warm + 45)


def conflict_scenario(road: RoadModel, T: int = 12, speed: float = 8.0) -> Scenario:
    """Vehicle 0 cuts into the left lane just ahead of vehicle 1."""
    if road.num_lanes_right < 2:
        raise ConfigError("num_lane_right", "the conflict scenario needs at least two lanes")
    warm = T + 8
    initial = [VehicleState(62.0, road.lane_center(0), 0.0, speed),
               VehicleState(50.0, road.lane_center(1), 0.0, speed + 0.5)]
    return Scenario("conflict", initial, [(warm, 0, L.CHANGE_LANE_LEFT, False)], warm + 40)


SCENARIOS = {"lane_change": lane_change_scenario, "conflict": conflict_scenario}


@dataclass
class DemoRun:
    scenario: str
    entries: list = field(default_factory=list)  # one dict per tick
    results: list = field(default_factory=list)  # TickResult per tick
    states: list = field(default_factory=list)  # {agent: VehicleState} per tick

    def labels(self, agent: int) -> list:
        return [next((a["label"] for a in e["agents"] if a["id"] == agent), None) for e in self.entries]

    def votes(self, agent: int) -> list:
        return [next((a["vote"] for a in e["agents"] if a["id"] == agent), None) for e in self.entries]

    @property
    def flag_count(self) -> int:
        return sum(len(e["flags"]) for e in self.entries)

    def latency_summary(self) -> dict:
        lat = np.array([e["latency_ms"] for e in self.entries]) if self.entries else np.zeros(1)
        return {"ticks": len(self.entries), "mean_ms": float(lat.mean()),
                "max_ms": float(lat.max())}


def _entry(tick, stamp, frames, result: TickResult) -> dict:
    agents = []
    for f in frames:
        r = result.agents.get(f.agent_id)
        agents.append({"id": f.agent_id, "x": f.state.x, "y": f.state.y, "heading": f.state.heading,
                       "v": f.state.v_lon, "label": int(f.label),
                       "vote": None if r is None else r.intention,
                       "predictions": [] if r is None else r.predictions,
                       "fallback": bool(r and r.projection and r.projection.fallback)})
    return {"tick": tick, "timestamp_ms": stamp, "agents": agents,
            "flags": [{"cell": list(fl.cell), "agents": list(fl.agents), "window": list(fl.window)}
                      for fl in result.flags],
            "latency_ms": result.latency_ms}


def run_scenario(scenario: Scenario, model, road: RoadModel, seed: int = 0, world_kwargs=None,
                 horizon: float = 3.0, cell_length: float = 5.0, padding: float = 0.5) -> DemoRun:
    kwargs = dict(world_kwargs or {})
    kwargs["policy"] = QUIET_POLICY
    settings = WorldSettings(agents=len(scenario.initial), max_duration=1e9)
    world = World(road, seed, settings, initial=list(scenario.initial), **kwargs)
    loop = InferenceLoop(model, world.road, horizon=horizon, cell_length=cell_length, padding=padding)
    run = DemoRun(scenario.name)
    events = sorted(scenario.events, key=lambda e: e[0])
    for k in range(scenario.frames):
        for idx, agent, intention, clear in events:
            if idx == k:
                world.force_intention(agent, intention, check_clearance=clear)
        frames = world.step_frame()
        if not frames:
            break
        states = {f.agent_id: f.state for f in frames}
        result = loop.step(frames[0].tick, states)
        run.results.append(result)
        run.states.append(states)
        run.entries.append(_entry(frames[0].tick, frames[0].timestamp_ms, frames, result))
    return run


@dataclass(frozen=True)
class LaneChangeTiming:
    onset_ms: int  # decision instant of the maneuver
    vote_ms: int | None  # first voted ChangeLaneLeft after a LaneKeep vote
    maneuver_s: float

    @property
    def latency_ticks(self) -> float | None:
        return None if self.vote_ms is None else (self.vote_ms - self.onset_ms) / 200.0


def lane_change_timing(run: DemoRun, agent: int = 0,
                       intention: IntentionLabel = L.CHANGE_LANE_LEFT) -> LaneChangeTiming:
    labels, votes = run.labels(agent), run.votes(agent)
    stamps = [e["timestamp_ms"] for e in run.entries]
    idx = [k for k, lab in enumerate(labels) if lab == intention]
    if not idx:
        raise SeerError("scenario contains no lane change")
    first = idx[0]
    onset = stamps[first] - 200
    vote_ms = None
    seen_keep = False
    for k, v in enumerate(votes):
        if v == L.LANE_KEEP:
            seen_keep = True
        if k >= first and v == intention and seen_keep:
            vote_ms = stamps[k]
            break
    return LaneChangeTiming(onset, vote_ms, 0.2 * len(idx))


def write_demo(run: DemoRun, road: RoadModel, out_dir, snapshots: int = 0,
               cell_length: float = 5.0) -> list[str]:
    """Write ``<name>.ndjson`` and ``snapshots`` evenly spaced SVG frames; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, f"{run.scenario}.ndjson")
    with open(log_path, "w") as fh:
        for e in run.entries:
            fh.write(json.dumps(e) + "\n")
    written = [log_path]
    if snapshots and run.entries:
        picks = np.linspace(0, len(run.entries) - 1, snapshots).round().astype(int)
        for n, k in enumerate(picks):
            res, states = run.results[k], run.states[k]
            preds = {a: r.intention for a, r in res.agents.items()}
            paths = {a: r.projection.path for a, r in res.agents.items() if r.projection}
            focus = [s.x for s in states.values()]
            window = (max(0.0, min(focus) - 25.0), min(road.road_length, max(focus) + 45.0))
            path = os.path.join(out_dir, f"{run.scenario}_{n:03d}.svg")
            write_svg(path, road, states, preds, paths, res.flags, window,
                      f"{run.scenario} tick {res.tick}", cell_length=cell_length)
            written.append(path)
    return written


# -- serving ------------------------------------------------------------------------------------

class WorldService:
    """Runs episodes, applies inbound controls and publishes one frame per tick."""

    def __init__(self, config, server: TelemetryServer, model=None):
        self.config = config
        self.server = server
        self.model = model
        self.inbox: queue.Queue = queue.Queue(maxsize=1024)
        server.on_control = self._enqueue
        self.paused = False
        self.seed = config.seed
        self._new_world(self.seed)

    def _enqueue(self, msg: ControlMessage):
        if msg.command == "set_intention" and not 0 <= msg.intention < NUM_CLASSES:
            raise ConfigError("intention", f"cannot set intention {msg.intention}")
        self.inbox.put_nowait(msg)

    def _new_world(self, seed: int):
        cfg = self.config
        self.world = World(cfg.road(), seed, cfg.world(), **cfg.world_kwargs())
        self.loop = InferenceLoop(self.model, self.world.road, horizon=cfg.horizon,
                                  cell_length=cfg.cell_length, padding=cfg.padding) \
            if self.model is not None else None

    def _apply(self, msg: ControlMessage):
        try:
            if msg.command == "pause":
                self.paused = True
            elif msg.command == "resume":
                self.paused = False
            elif msg.command == "reseed":
                self.seed = msg.seed
                self._new_world(msg.seed)
            elif msg.command == "set_intention":
                self.world.force_intention(msg.agent, IntentionLabel(msg.intention))
            else:
                self.world.override_controls(msg.vehicle, Controls(
                    msg.throttle, msg.brake, msg.hand_brake, msg.steer, msg.signal_left, msg.signal_right))
        except SeerError as exc:
            log.warning("control %s ignored: %s", msg, exc)

    def tick(self) -> bool:
        """Advance one frame unless paused; returns whether a frame was published."""
        while True:
            try:
                self._apply(self.inbox.get_nowait())
            except queue.Empty:
                break
        if self.paused:
            return False
        frames = self.world.step_frame()
        if not frames:
            self.seed += 1
            self._new_world(self.seed)
            frames = self.world.step_frame()
        states = {f.agent_id: f.state for f in frames}
        intentions = {f.agent_id: f.label for f in frames}
        predictions, flags = None, None
        if self.loop is not None:
            res = self.loop.step(frames[0].tick, states)
            predictions = {a: r.intention for a, r in res.agents.items()}
            flags = res.flags
        self.server.publish(frame_message(frames[0].tick, frames[0].timestamp_ms, states,
                                          intentions, predictions, flags))
        return True

    def run(self, ticks: int | None = None, realtime: bool = True,
            stop: threading.Event | None = None) -> int:
        period = self.world.settings.frame_period_ms / 1000.0
        published = 0
        next_t = time.perf_counter()
        while (ticks is None or published < ticks) and (stop is None or not stop.is_set()):
            if self.tick():
                published += 1
            if realtime:
                next_t += period
                delay = next_t - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            elif self.paused:
                time.sleep(0.01)
        return published
