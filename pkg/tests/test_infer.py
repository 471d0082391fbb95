import math
import queue
import time

import numpy as np
import pytest

from helpers import brute_force_flags
from seer.errors import ConfigError, ContractError
from seer.infer import (InferenceLoop, detect_conflicts, infer_stream, project_path, run_inference_loop,
                        vote)
from seer.planner import IntentionLabel as L
from seer.rnn import RnnConfig, RnnModel
from seer.vehicle import VehicleState
from seer.world import World, WorldSettings


def constant_model(cls=0, T=6, input_dim=3, hidden=4):
    m = RnnModel.zeros(RnnConfig(input_dim=input_dim, T=T, hidden_dim=hidden, embed_dim=4))
    m.params["b_y"][cls] = 1.0
    return m


def test_vote_cases():
    assert vote([2] * 7 + [0] * 5) == 2
    assert vote([1] * 12) == 1
    assert vote([0, 2] * 6) == 2
    assert vote([2, 0] * 6) == 0
    assert vote([0] * 6 + [2] * 6) == 2
    with pytest.raises(ContractError):
        vote([])


def test_vote_stability(rng):
    # one edit moves the top-two margin by at most 2; a flip at margin 2 lands on a tie
    assert vote([0, 0, 0, 1]) == 0 and vote([1, 0, 0, 1]) == 1
    for _ in range(2000):
        preds = list(rng.integers(0, 3, int(rng.integers(1, 13))))
        counts = sorted(np.bincount(preds, minlength=5), reverse=True)
        k = int(rng.integers(len(preds)))
        changed = preds.copy()
        changed[k] = int(rng.integers(0, 5))
        if vote(changed) != vote(preds):
            margin = counts[0] - counts[1]
            assert margin <= 2
            if margin == 2:
                after = sorted(np.bincount(changed, minlength=5), reverse=True)
                assert after[0] == after[1]


def test_project_lane_keep(road):
    st = VehicleState(100.0, road.lane_center(1), 0.0, 20.0)
    proj = project_path(L.LANE_KEEP, st, road)
    xy = proj.path.xy
    assert xy[-1, 0] - xy[0, 0] == pytest.approx(60.0)
    assert np.allclose(xy[:, 1], road.lane_center(1))
    assert not proj.fallback


def test_project_lane_change_and_fallback(road):
    st = VehicleState(100.0, road.lane_center(1), 0.0, 20.0)
    proj = project_path(L.CHANGE_LANE_LEFT, st, road)
    assert proj.path.xy[-1, 1] == pytest.approx(road.lane_center(2))
    top = VehicleState(100.0, road.lane_center(2), 0.0, 20.0)
    fb = project_path(L.CHANGE_LANE_LEFT, top, road)
    assert fb.fallback and fb.intention == L.LANE_KEEP and fb.requested == L.CHANGE_LANE_LEFT
    assert project_path(L.CHANGE_LANE_RIGHT, VehicleState(100.0, road.lane_center(0), 0, 5.0), road).fallback
    with pytest.raises(ContractError):
        project_path(L.CAR_FOLLOW, st, road)


def _triples(road, specs):
    out = []
    for agent, (x, lane, intention, v) in specs.items():
        proj = project_path(intention, VehicleState(x, road.lane_center(lane), 0.0, v), road)
        out.append((agent, proj.path, proj.speed))
    return out


def test_conflict_examples(road):
    parallel = _triples(road, {0: (50.0, 0, L.LANE_KEEP, 8.0), 1: (50.0, 1, L.LANE_KEEP, 8.0)})
    assert detect_conflicts(parallel, road) == []
    cut_in = _triples(road, {0: (55.0, 0, L.CHANGE_LANE_LEFT, 8.0), 1: (50.0, 1, L.LANE_KEEP, 8.0)})
    flags = detect_conflicts(cut_in, road)
    assert flags and {f.agents for f in flags} == {(0, 1)}
    assert {(f.cell, f.agents) for f in flags} == brute_force_flags(cut_in, road)
    # agent 1 reaches the cells agent 0 passes well over a second later
    late = _triples(road, {0: (100.0, 1, L.LANE_KEEP, 20.0), 1: (70.0, 1, L.LANE_KEEP, 5.0)})
    assert detect_conflicts(late, road) == []
    for f in flags:
        assert f.window[0] <= f.window[1]


def test_conflicts_match_brute_force_and_order(road, rng):
    for _ in range(25):
        specs = {}
        for a in range(int(rng.integers(2, 5))):
            lane = int(rng.integers(0, 3))
            intention = [L.LANE_KEEP, L.CHANGE_LANE_LEFT, L.CHANGE_LANE_RIGHT][int(rng.integers(3))]
            specs[int(a)] = (float(rng.uniform(20, 120)), lane, intention, float(rng.uniform(3, 15)))
        triples = _triples(road, specs)
        flags = detect_conflicts(triples, road)
        assert {(f.cell, f.agents) for f in flags} == brute_force_flags(triples, road)
        assert detect_conflicts(triples[::-1], road) == flags
    with pytest.raises(ContractError):
        detect_conflicts(triples + triples[:1], road)


def test_loop_warm_up_and_empty(road):
    loop = InferenceLoop(constant_model(0, T=6), road)
    st = VehicleState(10.0, road.lane_center(0), 0.0, 8.0)
    results = [loop.step(k, {7: VehicleState(st.x + 1.6 * k, st.y, 0.0, 8.0)}) for k in range(8)]
    assert [r.agents[7].intention for r in results] == [None] * 5 + [0] * 3
    assert results[5].agents[7].counts == {0: 6}
    assert loop.step(9, {}).agents == {}
    assert list(infer_stream(InferenceLoop(constant_model(), road), [(0, {}), (1, {})])) == []


def test_loop_rejects_variant_mismatch(road):
    with pytest.raises(ConfigError, match="feature_variant"):
        InferenceLoop(constant_model(input_dim=3), road, variant="A2")
    with pytest.raises(ConfigError):
        InferenceLoop(constant_model(input_dim=4), road)


def test_ten_agent_latency(road):
    model = RnnModel.initialize(RnnConfig(T=12), seed=0)
    world = World(road, 5, WorldSettings(agents=10))
    loop = InferenceLoop(model, world.road)
    for _ in range(40):
        frames = world.step_frame()
        loop.step(frames[0].tick, {f.agent_id: f.state for f in frames})
    summary = loop.latency_summary()
    assert summary["ticks"] == 40 and summary["mean_ms"] < 50.0


def test_run_inference_loop_thread(road):
    frames_in, results_out = queue.Queue(maxsize=8), queue.Queue(maxsize=64)
    world = World(road, 6, WorldSettings(agents=3))
    import threading

    out = {}
    worker = threading.Thread(target=lambda: out.update(
        run_inference_loop(constant_model(), world.road, frames_in, results_out)))
    worker.start()
    for _ in range(10):
        frames = world.step_frame()
        frames_in.put((frames[0].tick, {f.agent_id: f.state for f in frames}))
    frames_in.put((99, {}))  # windows exist, so an empty tick still reports
    frames_in.put(None)
    worker.join(timeout=10)
    assert not worker.is_alive()
    results = [results_out.get_nowait() for _ in range(results_out.qsize())]
    assert len(results) == 11 and out["ticks"] == 11
    assert results[-1].agents == {}
    assert all(a.intention == 0 for a in results[6].agents.values())
