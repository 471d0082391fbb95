"""Command line front end: ``seer generate | train | eval | demo | serve``.

Every setting of :class:`~seer.config.ScenarioConfig` is also a flag of the
same name; flags override the ``--config`` file.  Errors print a single line
``seer: error[<code>]: <kind>: <message>`` on stderr and exit with 2 (usage
or configuration), 3 (data) or 4 (runtime).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import threading

import numpy as np

from . import __version__
from .config import ScenarioConfig, load_config
from .dataset import DatasetManifest, config_hash, load_dataset, stack, write_dataset
from .errors import ConfigError, DataError, SeerError
from .evaluation import ReportBlock, clean, evaluate, format_table, report_json
from .generate import generate_records
from .planner import IntentionLabel
from .rnn import load_model, save_model
from .train import train

log = logging.getLogger("seer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

_HELP = {
    "scene": "highway or urban (urban adds a signalised stop line)",
    "num_lane_right": "driving lanes in the recorded direction",
    "num_lane_left": "lanes of the opposite direction",
    "lane_width": "lane width in metres",
    "road_length": "road length in metres",
    "agents": "vehicles per episode",
    "seed": "base seed of the training split and of model initialization",
    "test_seed": "base seed of the test split",
    "log_frequency": "physics steps (10 ms each) per recorded frame",
    "log_port": "TCP port of the telemetry stream",
    "control_port": "separate TCP port for control messages (0: use log_port)",
    "batchmode": "no real-time pacing (serve runs as fast as possible)",
    "traction": "tyre friction coefficient",
    "forward_slip_limit": "longitudinal slip limit",
    "sideway_slip_limit": "lateral slip limit",
    "feature_variant": "A2 (s, d) or A3 (s, d, heading)",
    "T": "frames per sequence (6 or 12)",
}


def _config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("scenario settings (override --config)")
    group.add_argument("--config", metavar="PATH", help="YAML settings file")
    group.add_argument("--dump_config", metavar="PATH",
                       help="write the effective settings as YAML ('-' for stdout)")
    for f in dataclasses.fields(ScenarioConfig):
        default = f.default
        names = [f"--{f.name}"]
        if f.name == "batchmode":
            names.insert(0, "-batchmode")
            group.add_argument(*names, dest=f.name, action="store_const", const=True,
                               default=None, help=_HELP[f.name])
            continue
        group.add_argument(*names, dest=f.name, type=type(default), default=None,
                           metavar=type(default).__name__.upper(),
                           help=f"{_HELP.get(f.name, f.name.replace('_', ' '))} (default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seer", allow_abbrev=False,
                                     description="Driving intention prediction on simulated traffic.")
    parser.add_argument("--version", action="version", version=f"seer {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", allow_abbrev=False, help="simulate traffic and write a dataset")
    _config_flags(p)
    p.add_argument("--out", metavar="PATH", help="dataset path (default: the dataset setting)")

    p = sub.add_parser("train", allow_abbrev=False, help="train a classifier on a dataset")
    _config_flags(p)
    p.add_argument("--out", metavar="PATH", help="model path (default: the model setting)")

    p = sub.add_parser("eval", allow_abbrev=False, help="evaluate a model on the test split")
    _config_flags(p)
    p.add_argument("--three_class", action="store_true", help="table restricted to classes 0-2")
    p.add_argument("--split", default="test", choices=("train", "test"))

    p = sub.add_parser("demo", allow_abbrev=False, help="scripted scenarios with logs and SVG frames")
    _config_flags(p)
    p.add_argument("--scenario", default="all", choices=("lane_change", "conflict", "all"))
    p.add_argument("--out_dir", default="demo", metavar="DIR")
    p.add_argument("--snapshots", type=int, default=8, metavar="N", help="SVG frames per scenario")

    p = sub.add_parser("serve", allow_abbrev=False, help="stream simulated traffic over TCP")
    _config_flags(p)
    p.add_argument("--ticks", type=int, default=None, metavar="N", help="stop after N frames")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--with_model", action="store_true",
                   help="attach predictions and risk flags using the model setting")
    return parser


def _settings(args) -> ScenarioConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(ScenarioConfig)
                 if getattr(args, f.name, None) is not None}
    config = load_config(args.config, overrides)
    if args.dump_config:
        text = config.dump()
        if args.dump_config == "-":
            sys.stdout.write(text)
        else:
            with open(args.dump_config, "w") as fh:
                fh.write(text)
    return config


def _require(path: str, setting: str) -> str:
    if not os.path.isfile(path):
        raise ConfigError(setting, f"no such file: {path}")
    return path


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _class_counts(records) -> str:
    seqs = np.zeros(len(IntentionLabel), dtype=np.int64)
    steps = np.zeros(len(IntentionLabel), dtype=np.int64)
    for r in records:
        present = np.bincount(r.labels, minlength=len(IntentionLabel))
        steps += present
        seqs += present > 0
    rows = [f"  {'class':<20} {'sequences':>10} {'timesteps':>10}"]
    rows += [f"  {lab.value} {lab.display:<18} {seqs[lab]:>10d} {steps[lab]:>10d}"
             for lab in IntentionLabel]
    return "\n".join(rows)


def _data_settings(config: ScenarioConfig) -> dict:
    keys = ("scene", "num_lane_right", "num_lane_left", "lane_width", "road_length", "agents",
            "seed", "test_seed", "transition_rate", "max_duration", "traction", "forward_slip_limit",
            "sideway_slip_limit", "mass", "engine_torque", "brake_torque", "max_speed", "kp", "ki",
            "kd", "integral_clamp", "lane_change_distance", "acceleration", "follow_gap",
            "feature_variant", "T", "log_frequency", "train_sequences", "test_sequences")
    return {k: getattr(config, k) for k in keys}


def cmd_generate(args) -> int:
    config = _settings(args)
    out = args.out or config.dataset
    road, settings, kwargs = config.road(), config.world(), config.world_kwargs()
    train_set = generate_records(road, config.train_sequences, config.T, config.seed, "train",
                                 settings=settings, variant=config.feature_variant, **kwargs)
    test_set = generate_records(road, config.test_sequences, config.T, config.test_seed, "test",
                                settings=settings, variant=config.feature_variant,
                                first_id=len(train_set), **kwargs)
    manifest = DatasetManifest(config.feature_variant, config.T, seed=config.seed,
                               config_hash=config_hash(_data_settings(config)))
    _ensure_parent(out)
    write_dataset(out, manifest, train_set + test_set)
    print(f"wrote {out}: {manifest.counts['train']} train / {manifest.counts['test']} test sequences, "
          f"T={manifest.T}, {manifest.frame_period_ms} ms period, features {manifest.feature_variant}, "
          f"config {manifest.config_hash}")
    for name, part in (("train", train_set), ("test", test_set)):
        print(f"{name} split (raw labels):")
        print(_class_counts(part))
    print(f"after cleaning: {len(clean(train_set, config.stop_as))} train / "
          f"{len(clean(test_set, config.stop_as))} test sequences")
    return EXIT_OK


def _load_split(path: str, split: str, config: ScenarioConfig):
    manifest, records = load_dataset(_require(path, "dataset"))
    chosen = clean([r for r in records if r.split == split], config.stop_as)
    if not chosen:
        raise DataError(f"{path}: no usable {split} sequences after cleaning")
    return manifest, chosen


def cmd_train(args) -> int:
    config = _settings(args)
    manifest, records = _load_split(config.dataset, "train", config)
    if manifest.feature_variant != config.feature_variant:
        raise ConfigError("feature_variant", f"settings ask for {config.feature_variant}, "
                                             f"dataset has {manifest.feature_variant}")
    rnn_cfg = config.rnn(T=manifest.T)
    x, y = stack(records)
    print(f"training {rnn_cfg.cell} on {len(records)} sequences "
          f"(T={manifest.T}, features {manifest.feature_variant})")
    print("epoch      loss   accuracy  grad-norm   seconds", flush=True)

    def progress(e):
        print(f"{e.epoch:5d}  {e.loss:8.5f}   {e.accuracy:8.4f}  {e.grad_norm:9.4f}  {e.seconds:8.2f}",
              flush=True)

    model, history = train(x, y, rnn_cfg, progress=progress)
    out = args.out or config.model
    _ensure_parent(out)
    # timings are left out so repeated runs give identical files
    meta = {"dataset_config": manifest.config_hash, "scene": config.scene,
            "epochs": [{k: v for k, v in e.items() if k != "seconds"} for e in history.to_dict()]}
    save_model(model, out, meta)
    print(f"final training accuracy {history.final_accuracy:.4f}; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _settings(args)
    model, meta = load_model(_require(config.model, "model"), with_metadata=True)
    manifest, records = _load_split(config.dataset, args.split, config)
    if manifest.feature_variant != model.config.feature_variant:
        raise ConfigError("feature_variant", f"model expects {model.config.feature_variant}, "
                                             f"dataset has {manifest.feature_variant}")
    if manifest.T != model.config.T:
        raise ConfigError("T", f"model expects T={model.config.T}, dataset has T={manifest.T}")
    cm, _ = evaluate(model, records)
    epochs = meta.get("epochs") or []
    block = ReportBlock(model.config.cell, manifest.feature_variant, manifest.T,
                        meta.get("scene", config.scene), cm, [],
                        epochs[-1]["accuracy"] if epochs else None)
    print(format_table([block], three_class=args.three_class))
    _ensure_parent(config.report)
    with open(config.report, "w") as fh:
        fh.write(report_json([block]) + "\n")
    print(f"wrote {config.report}")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .live import SCENARIOS, lane_change_timing, run_scenario, write_demo

    config = _settings(args)
    if args.snapshots < 0:
        raise ConfigError("snapshots", "must be >= 0")
    model = load_model(_require(config.model, "model"))
    road = config.road()
    names = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    for name in names:
        scenario = SCENARIOS[name](road, model.config.T)
        run = run_scenario(scenario, model, road, config.seed, config.world_kwargs(),
                           config.horizon, config.cell_length, config.padding)
        paths = write_demo(run, road, args.out_dir, args.snapshots, config.cell_length)
        lat = run.latency_summary()
        print(f"{name}: {lat['ticks']} ticks, {run.flag_count} risk flags, "
              f"inference mean {lat['mean_ms']:.2f} ms max {lat['max_ms']:.2f} ms; "
              f"wrote {len(paths) - 1} SVG frames and {paths[0]}")
        if name == "lane_change":
            timing = lane_change_timing(run, scenario.focus)
            shown = "none" if timing.latency_ticks is None else f"{timing.latency_ticks:.0f} ticks"
            print(f"  vote LaneKeep -> ChangeLaneLeft after {shown}; "
                  f"maneuver lasted {timing.maneuver_s:.1f} s")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .live import WorldService
    from .stream import TelemetryServer

    config = _settings(args)
    model = load_model(_require(config.model, "model")) if args.with_model else None
    server = TelemetryServer(args.host, config.log_port).start()
    control = None
    if config.control_port:
        control = TelemetryServer(args.host, config.control_port).start()
    service = WorldService(config, server, model)
    if control is not None:
        control.on_control = server.on_control
    host, port = server.address
    print(f"serving frames on {host}:{port}" +
          (f", controls on {control.address[1]}" if control else ""), flush=True)
    stop = threading.Event()
    try:
        n = service.run(args.ticks, realtime=not config.batchmode, stop=stop)
    except KeyboardInterrupt:
        n = None
    finally:
        stop.set()
        server.stop()
        if control is not None:
            control.stop()
    print(f"stopped after {n} frames" if n is not None else "interrupted")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "demo": cmd_demo,
            "serve": cmd_serve}


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"seer: error[{code}]: {kind}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2 from argparse
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SeerError as exc:
        return _fail(exc.exit_code, type(exc).__name__, exc)
    except OSError as exc:
        return _fail(EXIT_DATA, "OSError", exc)
    except KeyboardInterrupt:
        return _fail(EXIT_RUNTIME, "Interrupted", "stopped by user")
    except Exception as exc:  # noqa: BLE001 - the documented runtime exit status
        return _fail(EXIT_RUNTIME, type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())
