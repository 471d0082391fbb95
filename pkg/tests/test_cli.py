import dataclasses
import json
import os
import re

import jsonschema
import pytest
import yaml

from seer.cli import build_parser, main
from seer.config import ScenarioConfig
from seer.dataset import load_dataset
from seer.evaluation import REPORT_SCHEMA
from seer.rnn import load_model

SMALL = ["--train_sequences", "40", "--test_sequences", "12", "--T", "6", "--agents", "4",
         "--road_length", "400", "--epochs", "2", "--hidden_dim", "8", "--embed_dim", "4"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small dataset and model produced once through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data, model = root / "d.seerseq", root / "m.seernet"
    assert main(["generate", *SMALL, "--out", str(data)]) == 0
    assert main(["train", *SMALL, "--dataset", str(data), "--out", str(model)]) == 0
    return root, data, model


def test_help_lists_every_flag(capsys):
    for command in ("generate", "train", "eval", "demo", "serve"):
        with pytest.raises(SystemExit) as info:
            main([command, "--help"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        for f in dataclasses.fields(ScenarioConfig):
            assert f"--{f.name}" in out
        assert "--config" in out and "--dump_config" in out


def test_unknown_flag_and_abbreviation_rejected(capsys):
    for argv in (["generate", "--bogus", "1"], ["generate", "--road_len", "10"], ["nope"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2
    capsys.readouterr()


def test_invalid_lane_count_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "generate", "--num_lane_right", "0", "--out", tmp_path / "x")
    assert code == 2
    assert re.fullmatch(r"seer: error\[2\]: ConfigError: num_lane_right: .+\n", err)
    assert not (tmp_path / "x").exists()


def test_dump_config_roundtrip(capsys, tmp_path):
    dumped = tmp_path / "eff.yaml"
    code, _, _ = run(capsys, "generate", *SMALL, "--scene", "urban", "-batchmode",
                     "--dump_config", dumped, "--out", tmp_path / "d")
    assert code == 0
    cfg = yaml.safe_load(dumped.read_text())
    assert cfg["scene"] == "urban" and cfg["batchmode"] is True and cfg["T"] == 6
    again = tmp_path / "again.yaml"
    code, _, _ = run(capsys, "generate", "--config", dumped, "--dump_config", again,
                     "--out", tmp_path / "d2")
    assert code == 0 and again.read_text() == dumped.read_text()
    assert (tmp_path / "d").read_bytes() == (tmp_path / "d2").read_bytes()


def test_generate_is_deterministic(capsys, tmp_path, workspace):
    _, data, _ = workspace
    code, out, _ = run(capsys, "generate", *SMALL, "--out", tmp_path / "again.seerseq")
    assert code == 0
    assert (tmp_path / "again.seerseq").read_bytes() == data.read_bytes()
    assert "Lane Keep" in out or "LaneKeep" in out
    manifest, records = load_dataset(data)
    assert manifest.T == 6 and manifest.frame_period_ms == 200
    assert manifest.counts == {"train": 40, "test": 12}
    code, _, _ = run(capsys, "generate", *SMALL, "--seed", "5", "--out", tmp_path / "other")
    assert (tmp_path / "other").read_bytes() != data.read_bytes()


def test_train_is_deterministic(capsys, tmp_path, workspace):
    _, data, model = workspace
    code, out, _ = run(capsys, "train", *SMALL, "--dataset", data, "--out", tmp_path / "m2")
    assert code == 0
    assert (tmp_path / "m2").read_bytes() == model.read_bytes()
    assert re.search(r"^\s+2\s+\d+\.\d+", out, re.M)  # epoch table row
    assert load_model(model).config.T == 6


def test_eval_report(capsys, tmp_path, workspace):
    _, data, model = workspace
    report = tmp_path / "r.json"
    code, out, _ = run(capsys, "eval", *SMALL, "--dataset", data, "--model", model, "--report", report)
    assert code == 0 and "precision" in out
    doc = json.loads(report.read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    block = doc["blocks"][0]
    assert block["three_class"] == block["classes"][:3]
    for row in block["classes"]:
        if row["precision"] is not None:
            n = row["predicted"]
            assert row["precision_err"] == pytest.approx((row["precision"] * (1 - row["precision"]) / n) ** 0.5)
    code, out3, _ = run(capsys, "eval", *SMALL, "--dataset", data, "--model", model, "--report", report,
                        "--three_class")
    assert code == 0 and len(out3.splitlines()) < len(out.splitlines())


def test_eval_variant_mismatch_exit_2(capsys, tmp_path, workspace):
    _, _, model = workspace
    a2 = tmp_path / "a2.seerseq"
    assert run(capsys, "generate", *SMALL, "--feature_variant", "A2", "--out", a2)[0] == 0
    code, _, err = run(capsys, "eval", *SMALL, "--dataset", a2, "--model", model,
                       "--report", tmp_path / "r.json")
    assert code == 2 and "A3" in err and "A2" in err and "feature_variant" in err
    code, _, err = run(capsys, "train", *SMALL, "--dataset", a2, "--out", tmp_path / "m")
    assert code == 2


def test_missing_inputs_exit_2(capsys, tmp_path, workspace):
    _, data, _ = workspace
    code, _, err = run(capsys, "train", "--dataset", tmp_path / "none", "--out", tmp_path / "m")
    assert code == 2 and "dataset" in err
    code, _, err = run(capsys, "eval", "--dataset", data, "--model", tmp_path / "none")
    assert code == 2 and "model" in err


def test_corrupt_dataset_exit_3(capsys, tmp_path, workspace):
    _, data, _ = workspace
    bad = tmp_path / "bad.seerseq"
    bad.write_bytes(data.read_bytes()[:-10])
    code, _, err = run(capsys, "train", *SMALL, "--dataset", bad, "--out", tmp_path / "m")
    assert code == 3 and "FormatError" in err


def test_demo_outputs(capsys, tmp_path, workspace):
    _, _, model = workspace
    out_dir = tmp_path / "demo"
    code, out, _ = run(capsys, "demo", "--model", model, "--out_dir", out_dir, "--snapshots", 5,
                       "--road_length", "400")
    assert code == 0
    files = sorted(os.listdir(out_dir))
    for name in ("lane_change", "conflict"):
        assert sum(f.startswith(name) and f.endswith(".svg") for f in files) == 5
        lines = (out_dir / f"{name}.ndjson").read_text().splitlines()
        entries = [json.loads(x) for x in lines]
        assert [e["tick"] for e in entries] == sorted({e["tick"] for e in entries})
        assert all("latency_ms" in e and "flags" in e for e in entries)
    assert "lane_change:" in out and "conflict:" in out
    code, _, _ = run(capsys, "demo", "--model", model, "--out_dir", out_dir, "--snapshots", -1)
    assert code == 2


def test_serve_batch(capsys, tmp_path, workspace):
    code, out, _ = run(capsys, "serve", "--ticks", 5, "-batchmode", "--log_port", 0, "--agents", 3)
    assert code == 0 and "stopped after 5 frames" in out


def test_parser_builds():
    assert build_parser().prog
