"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each row reports the best-of-``repeat`` time per call for both backends and
the speedup.  The end-to-end rows time one simulated 10-agent frame and one
training step on a 64-sequence batch with the backend swapped in.
"""

import argparse
import json
import sys
import timeit

import numpy as np

import seer.kernels as kernels
from seer.planner import PidGains, IntentionLabel, plan_path
from seer.rnn import RnnConfig, RnnModel, loss_and_grads
from seer.road import build_straight_highway
from seer.vehicle import VehiclePhysicsParams, VehicleState
from seer.world import World, WorldSettings

HOOKS = ("track", "sigmoid", "lstm_forward", "lstm_backward", "gru_forward", "gru_backward")


def use(backend):
    for name in HOOKS:
        setattr(kernels, name, getattr(backend, name))


def cases():
    rng = np.random.default_rng(0)
    road = build_straight_highway(3, 3, 6.5, 1000.0)
    path = plan_path(IntentionLabel.CHANGE_LANE_LEFT, VehicleState(50.0, road.lane_center(0), 0.0, 8.0), road)
    gains, params = PidGains().packed(), VehiclePhysicsParams().packed()
    n, h = 64, 128
    a4, c = rng.normal(size=(n, 4 * h)), rng.normal(size=(n, h))
    z, s = rng.uniform(size=(n, h)), rng.normal(size=(n, h))

    def track(b):
        state = np.array([50.0, road.lane_center(0) + 0.3, 0.0, 8.0, 0.0, 0.0])
        b.track(path.waypoints, state, np.zeros(3), gains, params, 0.01, 20)

    def lstm_fwd(b):
        b.lstm_forward(a4, c)

    gates, _, tanh_c, _ = kernels.lstm_forward(a4, c)

    def lstm_bwd(b):
        b.lstm_backward(gates, c, tanh_c, s, s)

    def gru_fwd(b):
        b.gru_forward(s, z, s)

    def gru_bwd(b):
        b.gru_backward(s, z, s, s)

    x = rng.normal(size=(64, 12, 3))
    y = rng.integers(0, 5, (64, 12))
    model = RnnModel.initialize(RnnConfig(cell="lstm"))

    def world_frame(b):
        use(b)
        world = World(road, 3, WorldSettings(agents=10))
        for _ in range(5):
            world.step_frame()

    def train_step(b):
        use(b)
        loss_and_grads(x, y, model)

    return [("track (20 substeps)", track, 200), ("lstm_forward 64x128", lstm_fwd, 200),
            ("lstm_backward 64x128", lstm_bwd, 200), ("gru_forward 64x128", gru_fwd, 200),
            ("gru_backward 64x128", gru_bwd, 200), ("world: 10 agents x 5 frames", world_frame, 3),
            ("lstm loss+grads 64x12", train_step, 3)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args(argv)
    backends = {b.NAME: b for b in kernels.available_backends()}
    if "cython" not in backends:
        print("compiled extension not built; only the Python backend is available", file=sys.stderr)
    original = {name: getattr(kernels, name) for name in HOOKS}
    rows = []
    print(f"{'case':<30} " + " ".join(f"{n + ' ms':>12}" for n in backends) + f" {'speedup':>9}")
    try:
        for name, fn, number in cases():
            times = {}
            for bname, b in backends.items():
                t = min(timeit.repeat(lambda: fn(b), number=number, repeat=args.repeat)) / number
                times[bname] = 1000.0 * t
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            rows.append({"case": name, **{f"{k}_ms": v for k, v in times.items()}, "speedup": speed})
            print(f"{name:<30} " + " ".join(f"{times[n]:12.4f}" for n in backends) + f" {speed:8.1f}x")
    finally:
        for k, v in original.items():
            setattr(kernels, k, v)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
