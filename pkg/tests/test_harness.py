import csv
import json

import numpy as np
import pytest

import src.harness as harness
from src.config import parse_config
from src.errors import SchemaError, TrainingDivergenceError
from src.harness import aggregate, diagnostics, format_value, run, summarize, sweep, write_csv, write_run


def _gridworld(method="drc", omega=0.5, steps=2000, **extra):
    data = {
        "name": "tiny",
        "method": method,
        "noise": {"kind": "gcm", "n_r": 6, "omega": omega},
        "disc": {"n_r": 6, "known_range": True},
        "agent": {"total_steps": steps, "cadence": 500, "eval_episodes": 1},
    }
    data.update(extra)
    return parse_config(data)


def _read(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_aggregate_uses_unbiased_standard_error():
    result = aggregate([1.0, 2.0, 3.0, 4.0])
    assert result.mean == 2.5
    assert result.se == pytest.approx(1.2909944 / 2)
    assert result.n == 4
    assert np.isnan(aggregate([]).mean)


def test_format_value():
    assert format_value(None) == ""
    assert format_value(True) == "1"
    assert format_value(np.int64(3)) == "3"
    assert format_value(1 / 3) == "0.333333333"


def test_every_seed_gets_its_own_records():
    result = run(_gridworld(seeds=list(range(10))))
    assert [s.seed for s in result.seeds] == list(range(10))
    assert all(len(s.records) == 4 for s in result.completed)
    assert {r.seed for r in result.records} == set(range(10))


def test_parallel_workers_match_serial_run():
    config = _gridworld(seeds=[0, 1])
    serial, parallel = run(config, 1), run(config, 2)
    assert serial.records == parallel.records


def test_diverged_seed_is_reported_and_excluded(monkeypatch):
    real = harness.q_learning_train

    def flaky(env, pipeline, config, streams, observer=None):
        if flaky.calls == 1:
            flaky.calls += 1
            raise TrainingDivergenceError("non-finite loss", {"iteration": 3})
        flaky.calls += 1
        return real(env, pipeline, config, streams, observer)

    flaky.calls = 0
    monkeypatch.setattr(harness, "q_learning_train", flaky)
    result = run(_gridworld(seeds=[0, 1, 2]))
    assert [s.seed for s in result.failed] == [1]
    summary = summarize(result)
    assert summary["excluded"] == 1
    assert summary["seeds_completed"] == 2
    assert summary["final"]["clean_return"]["n"] == 2


def test_write_run_files(tmp_path):
    summary = write_run(run(_gridworld(seeds=[0, 1])), tmp_path)
    records = _read(tmp_path / "records.csv")
    assert len(records) == 8
    assert records[0]["method"] == "drc"
    curve = _read(tmp_path / "curve.csv")
    assert [row["n_seeds"] for row in curve] == ["2"] * 4
    saved = json.loads((tmp_path / "summary.json").read_text())
    assert saved["hidden_lane_leaks"] == 0
    assert saved["reference"]["optimal_return"] == pytest.approx(-1 / 3)
    assert summary["metric"] == "return"
    assert not (tmp_path / "votes.csv").exists()


def test_bandit_runs_write_regret_columns(tmp_path):
    config = parse_config({"name": "bandit", "env": {"kind": "bandit"}, "agent": {"rounds": 400, "bandit_cadence": 200}})
    summary = write_run(run(config), tmp_path)
    records = _read(tmp_path / "records.csv")
    assert len(records) == 2
    assert "clean_regret" in records[0] and "clean_return" not in records[0]
    assert "clean_regret_se" in _read(tmp_path / "curve.csv")[0]
    assert summary["metric"] == "regret"
    assert summary["final"]["clean_regret"]["n"] == 1


def _network_bandit(iterations):
    return parse_config(
        {
            "name": "bandit_network",
            "method": "drc",
            "env": {"kind": "bandit"},
            "noise": {"kind": "gcm", "n_r": 5, "omega": 0.5},
            "disc": {"n_r": 5, "known_range": True},
            "critic": {"kind": "network", "hidden_sizes": [8], "iterations": iterations},
            "agent": {"rounds": 400, "bandit_cadence": 200},
        }
    )


def test_network_critics_are_saved_and_resumed(tmp_path):
    run(_network_bandit(iterations=5), checkpoint_dir=tmp_path / "first")
    saved = tmp_path / "first" / "seed0_critic.params"
    assert saved.exists()

    # no training iterations: a resumed critic is written back exactly as loaded
    untrained = _network_bandit(iterations=0)
    run(untrained, checkpoint_dir=tmp_path / "resumed", resume_dir=tmp_path / "first")
    assert (tmp_path / "resumed" / "seed0_critic.params").read_bytes() == saved.read_bytes()
    run(untrained, checkpoint_dir=tmp_path / "fresh")
    assert (tmp_path / "fresh" / "seed0_critic.params").read_bytes() != saved.read_bytes()


def test_gdrc_network_critics_are_saved_per_candidate(tmp_path):
    config = _gridworld(
        method="gdrc",
        critic={"kind": "network", "hidden_sizes": [8], "iterations": 2},
        gdrc={"candidates": [2, 4], "rule": "knee"},
        agent={"total_steps": 500, "cadence": 500, "eval_episodes": 1},
    )
    run(config, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["seed0_critic_n2.params", "seed0_critic_n4.params"]


def test_tabular_runs_save_no_checkpoints(tmp_path):
    run(_gridworld(), checkpoint_dir=tmp_path / "critics")
    assert not (tmp_path / "critics").exists()


def test_gdrc_run_writes_votes(tmp_path):
    config = _gridworld(method="gdrc", gdrc={"candidates": [2, 4, 6, 8], "rule": "knee"})
    write_run(run(config), tmp_path)
    votes = _read(tmp_path / "votes.csv")
    assert {row["candidate"] for row in votes} == {"2", "4", "6", "8"}
    assert votes[0]["dH"] == ""


def test_diagnostics_on_a_clean_channel(tmp_path):
    result = run(_gridworld(omega=0.0, steps=5000))
    diag = diagnostics(result, tmp_path)
    assert all(row[3] == pytest.approx(0.0, abs=1e-12) for row in diag.ce_trace)
    histogram = _read(tmp_path / "label_histogram.csv")
    assert sum(int(row["count"]) for row in histogram) == 5000
    assert {row["lane"] for row in histogram} == {"evaluation_only"}


def test_cross_entropy_stays_at_log_n_on_a_uniform_channel(tmp_path):
    result = run(_gridworld(omega=1.0, steps=20_000))
    trace = diagnostics(result).ce_trace
    assert trace[-1][3] == pytest.approx(np.log(6), abs=0.05)


def test_sweep_runs_one_config_per_value(tmp_path):
    results = sweep(_gridworld(steps=1000), "noise.omega", [0.1, 0.3, 0.5, 0.7], out_dir=tmp_path)
    assert [value for value, _ in results] == [0.1, 0.3, 0.5, 0.7]
    assert [result.config.noise.omega for _, result in results] == [0.1, 0.3, 0.5, 0.7]
    rows = _read(tmp_path / "sweep.csv")
    assert {row["noise.omega"] for row in rows} == {"0.1", "0.3", "0.5", "0.7"}


def test_sweep_rejects_unknown_axis():
    with pytest.raises(SchemaError):
        sweep(_gridworld(steps=1000), "noise.shade", [1, 2])


def test_identical_configs_give_identical_files(tmp_path):
    config = _gridworld(seeds=[0, 1])
    write_run(run(config), tmp_path / "a")
    write_run(run(config), tmp_path / "b")
    for name in ("records.csv", "curve.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_write_csv_has_fixed_line_endings(tmp_path):
    write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 0.5], [None, 2.0]])
    assert (tmp_path / "x.csv").read_bytes() == b"a,b\n1,0.5\n,2\n"
