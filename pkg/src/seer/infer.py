"""Live intention inference: sliding windows, majority vote, path projection
and risk-spot detection."""

from __future__ import annotations

import logging
import math
import queue
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .dataset import extract_features
from .errors import ConfigError, ContractError, InfeasibleIntentionError, OutOfBoundsError
from .planner import IntentionLabel, Path, PlannerSettings, plan_path
from .rnn import RnnModel, forward
from .road import RoadModel
from .vehicle import VehicleState

log = logging.getLogger(__name__)


def vote_counts(predictions) -> Counter:
    return Counter(int(p) for p in predictions)


def vote(predictions) -> int:
    """Modal class; ties go to whichever tied class was predicted most recently."""
    preds = [int(p) for p in predictions]
    if not preds:
        raise ContractError("cannot vote on an empty prediction list")
    counts = Counter(preds)
    top = max(counts.values())
    tied = {c for c, n in counts.items() if n == top}
    for p in reversed(preds):
        if p in tied:
            return p
    raise AssertionError("unreachable")


# -- projection ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Projection:
    path: Path
    intention: IntentionLabel  # the intention the path realises
    requested: IntentionLabel
    speed: float

    @property
    def fallback(self) -> bool:
        return self.intention != self.requested


def project_path(intention, state: VehicleState, road: RoadModel, horizon: float = 3.0,
                 settings: PlannerSettings | None = None) -> Projection:
    """Planner geometry for the predicted intention over ``horizon`` seconds of travel.

    An infeasible lane change falls back to a lane-keeping projection and is
    flagged through :attr:`Projection.fallback`.
    """
    settings = settings or PlannerSettings()
    requested = IntentionLabel(intention)
    if not requested.trainable:
        raise ContractError(f"cannot project raw-only intention {requested.name}")
    length = max(state.v_lon * horizon, settings.spacing)
    try:
        path = plan_path(requested, state, road, (), settings, length=length)
    except InfeasibleIntentionError:
        path = plan_path(IntentionLabel.LANE_KEEP, state, road, (), settings, length=length)
    return Projection(path, path.intention, requested, float(state.v_lon))


# -- risk spots ----------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class RiskFlag:
    cell: tuple  # (lane index, longitudinal bucket)
    agents: tuple  # (lower id, higher id)
    window: tuple  # (start, end) seconds, padded overlap


def occupancy(path: Path, speed: float, road: RoadModel, cell_length: float = 5.0,
              horizon: float = 3.0) -> dict:
    """``{cell: (t_first, t_last)}`` for the waypoints of ``path`` travelled at ``speed``.

    A stopped vehicle holds its cells for the whole horizon.
    """
    xy = path.xy
    seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if speed > 1e-6:
        times = arc / speed
    else:
        times = None
    cells: dict = {}
    for i, (x, y) in enumerate(xy):
        cell = (road.lane_of(float(y)), int(math.floor(float(x) / cell_length)))
        lo, hi = (0.0, horizon) if times is None else (float(times[i]), float(times[i]))
        if cell in cells:
            a, b = cells[cell]
            cells[cell] = (min(a, lo), max(b, hi))
        else:
            cells[cell] = (lo, hi)
    return cells


def detect_conflicts(projections, road: RoadModel, cell_length: float = 5.0,
                     padding: float = 0.5, horizon: float = 3.0) -> list[RiskFlag]:
    """Flag every cell two agents claim in overlapping (padded) time windows.

    ``projections`` holds ``(agent_id, path, speed)`` triples; the result is
    sorted and independent of input order.
    """
    occ = {}
    for agent, path, speed in projections:
        if agent in occ:
            raise ContractError(f"agent {agent} projected twice")
        occ[agent] = occupancy(path, speed, road, cell_length, horizon)
    by_cell: dict = {}
    for agent, cells in occ.items():
        for cell, span in cells.items():
            by_cell.setdefault(cell, []).append((agent, span))
    flags = []
    for cell, claims in by_cell.items():
        claims.sort(key=lambda c: c[0])
        for i in range(len(claims)):
            for j in range(i + 1, len(claims)):
                (a, (a0, a1)), (b, (b0, b1)) = claims[i], claims[j]
                lo = max(a0, b0) - padding
                hi = min(a1, b1) + padding
                if lo <= hi:
                    flags.append(RiskFlag(cell, (a, b), (lo, hi)))
    return sorted(flags)


# -- inference loop --------------------------------------------------------------------------

@dataclass
class PredictionWindow:
    T: int
    features: deque = field(default=None)
    predictions: list = field(default_factory=list)
    intention: int | None = None
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.features is None:
            self.features = deque(maxlen=self.T)

    @property
    def ready(self) -> bool:
        return len(self.features) == self.T


@dataclass
class AgentResult:
    agent_id: int
    predictions: list  # per-step classes over the current window
    intention: int | None  # voted class; None during warm-up
    counts: dict
    projection: Projection | None = None


@dataclass
class TickResult:
    tick: int
    agents: dict  # agent id -> AgentResult
    flags: list
    latency_ms: float  # window update + batched forward + vote + projection + conflicts
    model_ms: float


class InferenceLoop:
    """Owns one window per agent; feed it one tick of states at a time."""

    def __init__(self, model: RnnModel, road: RoadModel, variant: str | None = None,
                 horizon: float = 3.0, cell_length: float = 5.0, padding: float = 0.5,
                 settings: PlannerSettings | None = None):
        dims = {2: "A2", 3: "A3"}
        if model.config.input_dim not in dims:
            raise ConfigError("feature_variant", f"model input_dim {model.config.input_dim} "
                                                 f"matches no feature variant")
        model_variant = dims[model.config.input_dim]
        if variant is not None and variant != model_variant:
            raise ConfigError("feature_variant", f"model expects {model_variant}, stream provides {variant}")
        self.model, self.road, self.variant = model, road, model_variant
        self.T = model.config.T
        self.horizon, self.cell_length, self.padding = horizon, cell_length, padding
        self.settings = settings or PlannerSettings()
        self.windows: dict[int, PredictionWindow] = {}
        self.latencies: list[float] = []

    def step(self, tick: int, states: dict) -> TickResult:
        """``states`` maps agent id to :class:`VehicleState` for this tick."""
        t0 = time.perf_counter()
        for agent in list(self.windows):
            if agent not in states:
                del self.windows[agent]
        for agent, st in states.items():
            win = self.windows.setdefault(agent, PredictionWindow(self.T))
            try:
                win.features.append(extract_features(st, self.road, self.variant).as_array())
            except OutOfBoundsError:
                win.features.clear()
        ready = sorted(a for a, w in self.windows.items() if w.ready)
        model_ms = 0.0
        results = {}
        if ready:
            batch = np.stack([np.stack(self.windows[a].features) for a in ready])
            m0 = time.perf_counter()
            preds = np.argmax(forward(batch, self.model), axis=-1)
            model_ms = 1000.0 * (time.perf_counter() - m0)
            for a, row in zip(ready, preds):
                win = self.windows[a]
                win.predictions = row.tolist()
                win.intention = vote(win.predictions)
                win.counts = dict(vote_counts(win.predictions))
        for agent in sorted(self.windows):
            win = self.windows[agent]
            proj = None
            if win.ready and win.intention is not None:
                proj = project_path(win.intention, states[agent], self.road, self.horizon, self.settings)
            results[agent] = AgentResult(agent, list(win.predictions) if win.ready else [],
                                         win.intention if win.ready else None,
                                         dict(win.counts) if win.ready else {}, proj)
        triples = [(a, r.projection.path, r.projection.speed) for a, r in results.items() if r.projection]
        flags = detect_conflicts(triples, self.road, self.cell_length, self.padding, self.horizon) \
            if len(triples) >= 2 else []
        latency = 1000.0 * (time.perf_counter() - t0)
        self.latencies.append(latency)
        return TickResult(tick, results, flags, latency, model_ms)

    def latency_summary(self) -> dict:
        lat = np.array(self.latencies) if self.latencies else np.zeros(1)
        return {"ticks": len(self.latencies), "mean_ms": float(lat.mean()),
                "p95_ms": float(np.percentile(lat, 95)), "max_ms": float(lat.max())}


def infer_stream(loop: InferenceLoop, ticks: Iterable) -> Iterator[TickResult]:
    """Drive ``loop`` over ``(tick, {agent: state})`` pairs; empty ticks emit nothing."""
    for tick, states in ticks:
        if not states and not loop.windows:
            continue
        yield loop.step(tick, states)


def run_inference_loop(model: RnnModel, road: RoadModel, frames_in: queue.Queue,
                       results_out: queue.Queue, stop: threading.Event | None = None,
                       **kwargs) -> dict:
    """Consume ``(tick, states)`` items from ``frames_in`` until a ``None`` sentinel
    (or ``stop``), pushing :class:`TickResult` objects to ``results_out``.

    Both queues are expected to be bounded; a full output queue blocks the loop.
    Returns the latency summary.
    """
    loop = InferenceLoop(model, road, **kwargs)
    while stop is None or not stop.is_set():
        try:
            item = frames_in.get(timeout=0.1)
        except queue.Empty:
            continue
        if item is None:
            break
        tick, states = item
        if not states and not loop.windows:
            continue
        results_out.put(loop.step(tick, states))
    return loop.latency_summary()
