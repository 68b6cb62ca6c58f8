import json
import os
from pathlib import Path

import pytest

from mobmod.cli import cli_dispatch


@pytest.fixture(scope="module")
def campus_json(tmp_path_factory):
    root = tmp_path_factory.mktemp("cfg")
    config = {
        "buildings": [
            {"name": "DORM-A", "building_type": "Dorm", "floors": 1, "zones_per_floor": 3},
            {"name": "EDU-1", "building_type": "Educational", "floors": 2, "zones_per_floor": 3},
            {"name": "DINE-1", "building_type": "Dining", "floors": 1, "zones_per_floor": 2},
            {"name": "DINE-2", "building_type": "Dining", "floors": 1, "zones_per_floor": 2},
            {"name": "LIB-1", "building_type": "Library", "floors": 1, "zones_per_floor": 2},
            {"name": "REC-1", "building_type": "Recreation", "floors": 1, "zones_per_floor": 2},
            {"name": "ADM-1", "building_type": "Admin", "floors": 1, "zones_per_floor": 2},
        ],
        "population": {"students": 4, "faculty": 2},
        "seed": 21,
    }
    p = root / "campus.json"
    p.write_text(json.dumps(config))
    return p


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, campus_json):
    """Run the whole CLI chain once; commands under test share the artifacts."""
    work = tmp_path_factory.mktemp("pipeline")
    env_salt = {"MOBMOD_SALT": "cli-test-salt"}
    os.environ.update(env_salt)
    sim = work / "sim"
    assert cli_dispatch([
        "simulate-campus", "--config", str(campus_json), "--days", "6",
        "--epsilon", "0.05", "--break-prob", "0.2", "--seed", "13",
        "--out", str(sim),
    ]) == 0
    events = work / "events.jsonl"
    assert cli_dispatch([
        "ingest", "--logs", str(sim), "--ap-map", str(sim / "ap_map.csv"),
        "--year", "2019", "--out", str(events),
    ]) == 0
    traj = work / "traj.jsonl"
    assert cli_dispatch([
        "build", "--events", str(events), "--ap-map", str(sim / "ap_map.csv"),
        "--granularity", "60", "--out", str(traj),
    ]) == 0
    model = work / "model.ckpt"
    assert cli_dispatch([
        "train", "--traj", str(traj), "--vocab", f"{traj}.vocab.json",
        "--epochs", "2", "--batch", "16", "--seed", "3",
        "--curve", str(work / "curve.csv"), "--out", str(model),
    ]) == 0
    return work, sim, events, traj, model


class TestPipelineCommands:
    def test_artifacts_exist(self, pipeline):
        work, sim, events, traj, model = pipeline
        assert events.stat().st_size > 0
        assert Path(f"{traj}.vocab.json").exists()
        assert model.exists()
        curve = (work / "curve.csv").read_text().splitlines()
        assert curve[0] == "epoch,train_loss,dev_loss" and len(curve) == 3

    def test_eval_writes_report(self, pipeline):
        work, sim, events, traj, model = pipeline
        report = work / "report.json"
        assert cli_dispatch([
            "eval", "--model", str(model), "--test", str(traj),
            "--split", "test", "--mode", "next-step", "--out", str(report),
        ]) == 0
        doc = json.loads(report.read_text())
        assert set(doc["accuracy"]) == {"context", "space_type", "building", "location"}
        assert doc["mode"] == "next_step"

    def test_eval_rollout_mode(self, pipeline):
        work, sim, events, traj, model = pipeline
        report = work / "rollout.json"
        assert cli_dispatch([
            "eval", "--model", str(model), "--test", str(traj),
            "--split", "test", "--mode", "rollout", "--out", str(report),
        ]) == 0
        assert json.loads(report.read_text())["mode"] == "rollout"

    def test_finetune_and_predict(self, pipeline):
        work, sim, events, traj, model = pipeline
        user = json.loads(Path(traj).read_text().splitlines()[0])["user"]
        tuned = work / "user.ckpt"
        assert cli_dispatch([
            "finetune", "--model", str(model), "--traj", str(traj),
            "--user", user, "--epochs", "1", "--out", str(tuned),
        ]) == 0
        prefix = work / "prefix.jsonl"
        prefix.write_text(Path(traj).read_text().splitlines()[0] + "\n")
        pred = work / "pred.json"
        assert cli_dispatch([
            "predict", "--model", str(tuned), "--prefix", str(prefix),
            "--upto", "9", "--out", str(pred),
        ]) == 0
        doc = json.loads(pred.read_text())
        assert set(doc) == {"context", "space_type", "building", "location"}
        assert len(doc["location"]) == 5
        assert doc["location"][0]["p"] >= doc["location"][1]["p"]

    def test_occupancy_csv(self, pipeline):
        work, sim, events, traj, model = pipeline
        occ = work / "occ.csv"
        assert cli_dispatch([
            "occupancy", "--traj", str(traj), "--vocab", f"{traj}.vocab.json",
            "--out", str(occ), "--json", str(work / "occ.json"),
        ]) == 0
        assert occ.read_text().splitlines()[0] == "bin_start,zone,count"
        assert (work / "occ.json").exists()

    def test_simulate_traces(self, pipeline):
        work, sim, events, traj, model = pipeline
        synth = work / "synth.jsonl"
        assert cli_dispatch([
            "simulate-traces", "--model", str(model), "--seed-days", str(traj),
            "--population", "5", "--topk", "5", "--seed", "7", "--out", str(synth),
        ]) == 0
        from mobmod.trajectory import read_trajectories_jsonl

        traces = read_trajectories_jsonl(synth)
        assert len(traces) == 5
        assert all(len(t.tokens_l) == 24 for t in traces)

    def test_reproducible_outputs(self, pipeline, tmp_path):
        work, sim, events, traj, model = pipeline
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            assert cli_dispatch([
                "simulate-traces", "--model", str(model), "--seed-days", str(traj),
                "--population", "4", "--seed", "11", "--out", str(out),
            ]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestCliErrors:
    def test_unknown_subcommand_exits_2(self, capsys):
        assert cli_dispatch(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_required_flag_exits_2(self, capsys):
        assert cli_dispatch(["ingest", "--logs", "/tmp"]) == 2
        err = capsys.readouterr().err
        assert "--ap-map" in err and "--out" in err

    def test_runtime_error_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "nope.ckpt"
        assert cli_dispatch(["eval", "--model", str(bad), "--test", str(bad),
                             "--out", str(tmp_path / "r.json")]) == 1
        assert "error" in capsys.readouterr().err

    def test_bad_noise_key_exits_1(self, tmp_path, campus_json, capsys):
        assert cli_dispatch([
            "simulate-campus", "--config", str(campus_json), "--days", "1",
            "--noise", "zap=1", "--out", str(tmp_path / "x"),
        ]) == 1
        assert "unknown noise key" in capsys.readouterr().err

    def test_help_exits_0(self):
        assert cli_dispatch(["--help"]) == 0
        assert cli_dispatch(["train", "--help"]) == 0
