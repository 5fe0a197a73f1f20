import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from egolane import harness
from egolane.cli import front_from_json, front_to_json, main, run
from egolane.config import load_config, parse_config
from egolane.dataset import DatasetError, load_dataset, load_sequence, save_dataset, save_sequence
from egolane.moo import CostPoint, ParetoFront
from egolane.sim import ConfigError, ScenarioConfig
from egolane.tracker import TrackerConfig
from egolane.trigger import TriggerParams

SMALL = "num_lanes: 4\nduration: 3.0\nmissing_prob: 0.3\ntracker:\n  max_hypotheses: 6\n"


# -- dataset files -----------------------------------------------------------------

def test_sequence_round_trip(short_dataset, short_model, tmp_path):
    for ls in short_dataset[:5]:
        path = tmp_path / "s.jsonl"
        save_sequence(path, ls)
        back = load_sequence(path)
        assert back.scenario_id == ls.scenario_id and back.valid == ls.valid and back.labels == ls.labels
        for name in ("truth_pose", "points", "types", "gnss", "odometry"):
            np.testing.assert_array_equal(getattr(back.sequence, name), getattr(ls.sequence, name))
        assert back.sequence.map.to_dict() == ls.sequence.map.to_dict() and back.sequence.config == ls.sequence.config
        for a, b in zip(back.mmq, ls.mmq):
            np.testing.assert_array_equal(a, b)
        params = TriggerParams("s4", (-0.9, 1.0))
        assert harness.run_sequence_online(back, short_model, params) == \
            harness.run_sequence_online(ls, short_model, params)


def test_dataset_directory(short_dataset, tmp_path):
    paths = save_dataset(tmp_path / "d", reversed(short_dataset[:6]))
    assert all(p.name.startswith("scenario_") for p in paths)
    assert [ls.scenario_id for ls in load_dataset(tmp_path / "d")] == sorted(ls.scenario_id for ls in short_dataset[:6])


def test_dataset_errors(short_dataset, tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "empty")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format": "other/9"}\n')
    with pytest.raises(DatasetError):
        load_sequence(bad)
    path = tmp_path / "cut.jsonl"
    save_sequence(path, short_dataset[0])
    path.write_text("".join(path.read_text().splitlines(keepends=True)[:-3]))
    with pytest.raises(DatasetError, match="frames"):
        load_sequence(path)


# -- config files ------------------------------------------------------------------

def test_parse_config():
    base, tracker = parse_config({"num_lanes": 3, "tracker": {"gate": 0.5}})
    assert base == ScenarioConfig(num_lanes=3) and tracker == TrackerConfig(gate=0.5)
    assert parse_config(None) == (ScenarioConfig(), TrackerConfig())
    with pytest.raises(ConfigError) as err:
        parse_config({"tracker": {"nope": 1}})
    assert err.value.field == "tracker.nope"
    with pytest.raises(ConfigError):
        parse_config({"num_lanes": 0})
    with pytest.raises(ConfigError):
        parse_config([1, 2])


def test_load_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(SMALL)
    base, tracker = load_config(path)
    assert base.duration == 3.0 and base.missing_prob == 0.3 and tracker.max_hypotheses == 6
    path.write_text("num_lanes: [1\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_front_json_round_trip():
    pts = [CostPoint(0.1, 0.2, 0.3, TriggerParams("s1", (0.5, -0.5, 0.25), 600)),
           CostPoint(0.2, 0.1, 0.4, TriggerParams("s1", (0.0, 1.0, -1.0), 600))]
    front = ParetoFront(pts, (1.0, 1.0), 0.72, [0.5, 0.72])
    data = json.loads(json.dumps(front_to_json(front, 1)))
    assert data["selected_index"] == 1 and data["points"][0]["variant"] == "s1"
    back = front_from_json(data)
    assert back.points == pts and back.hypervolume == 0.72 and back.history == [0.5, 0.72]
    with pytest.raises(ValueError):
        front_from_json({**data, "points": []})


# -- command line ------------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.yaml").write_text(SMALL)
    runner = CliRunner()
    res = runner.invoke(main, ["simulate", "--config", str(root / "small.yaml"), "--count", "40",
                               "--out", str(root / "data"), "--seed", "5"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["train", "--data", str(root / "data"), "--out", str(root / "model.json"),
                               "--rounds", "20", "--seed", "5"])
    assert res.exit_code == 0, res.output
    return root


def test_simulate_writes_scenarios(workspace):
    files = sorted((workspace / "data").glob("scenario_*.jsonl"))
    assert len(files) == 40
    header = json.loads(files[0].read_text().splitlines()[0])
    assert header["config"]["duration"] == 3.0 and len(header["hypotheses"]) >= 1


def test_optimize_and_evaluate(workspace):
    runner = CliRunner()
    front = workspace / "front.json"
    res = runner.invoke(main, ["optimize", "--data", str(workspace / "data"), "--model", str(workspace / "model.json"),
                               "--variant", "s4", "--gens", "3", "--out", str(front), "--seed", "2"])
    assert res.exit_code == 0, res.output
    data = json.loads(front.read_text())
    assert {"points", "hypervolume", "selected_index", "reference", "history"} <= set(data)
    assert all({"variant", "gamma", "horizon", "c_av", "c_ac", "c_ea"} <= set(p) for p in data["points"])
    assert len(data["history"]) == 4
    out = workspace / "row.json"
    res = runner.invoke(main, ["evaluate", "--front", str(front), "--data", str(workspace / "data"),
                               "--model", str(workspace / "model.json"), "--out", str(out)])
    assert res.exit_code == 0, res.output
    row = json.loads(out.read_text())
    assert row["method"] == "SMEOTSC2" and 0 <= row["accuracy"] <= 1 and row["hypervolume"] == data["hypervolume"]


def test_compare_outputs(workspace):
    runner = CliRunner()
    report, curves = workspace / "report.json", workspace / "curves.csv"
    res = runner.invoke(main, ["compare", "--data", str(workspace / "data"), "--model", str(workspace / "model.json"),
                               "--gens", "2", "--out", str(report), "--curves", str(curves), "--seed", "1"])
    assert res.exit_code == 0, res.output
    rows = json.loads(report.read_text())["rows"]
    assert [r["method"] for r in rows] == ["METSC", "MEOTSC", "SMEOTSC1", "SMEOTSC2"]
    with open(curves) as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["t", "no_trigger_accuracy", "cumulative_trigger_fraction"]
    assert len(table) == 1 + 120


def test_compare_simulates_when_no_data(workspace):
    res = CliRunner().invoke(main, ["compare", "--config", str(workspace / "small.yaml"), "--count", "30",
                                    "--gens", "1", "--out", str(workspace / "r2.json"),
                                    "--curves", str(workspace / "c2.csv")])
    assert res.exit_code == 0, res.output
    assert len(json.loads((workspace / "r2.json").read_text())["rows"]) == 4


def test_seed_option_everywhere():
    for cmd in ("simulate", "train", "optimize", "evaluate", "compare"):
        res = CliRunner().invoke(main, [cmd, "--help"])
        assert res.exit_code == 0 and "--seed" in res.output


def test_errors_exit_nonzero(workspace, tmp_path, capsys):
    assert run(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "m.json")]) != 0
    (tmp_path / "empty").mkdir()
    assert run(["train", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "m.json")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("num_lanes: 4\nwarp_factor: 9\n")
    assert run(["simulate", "--config", str(bad), "--count", "2", "--out", str(tmp_path / "d")]) == 1
    assert "warp_factor" in capsys.readouterr().err
    assert run(["optimize", "--data", str(workspace / "data"), "--model", str(workspace / "model.json"),
                "--variant", "s9", "--out", str(tmp_path / "f.json")]) != 0
    assert run(["optimize", "--data", str(workspace / "data"), "--model", str(workspace / "model.json"),
                "--pop", "5", "--out", str(tmp_path / "f.json")]) == 1
    assert run(["--help"]) == 0
