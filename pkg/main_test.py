"""Command-line interface, driven through click's CliRunner."""

import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from adl_planner import Action, load_instance, load_plan, save_instance
from conftest import make_instance
from main import cli
from task_domain import load_library, load_tasks


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def workspace(tmp_path, runner):
    """Block tasks, a quickly trained model and a two-skill library."""
    tasks = tmp_path / "tasks.json"
    result = runner.invoke(cli, ["gen-tasks", "--domain", "block", "--count", "12", "--seed", "3",
                                 "-o", str(tasks)])
    assert result.exit_code == 0, result.output

    train_dir = tmp_path / "train"
    result = runner.invoke(cli, ["train-preconds", "--tasks", str(tasks), "-m", "12", "-n", "12",
                                 "--epochs", "5", "--hidden", "8", "--min-auc", "0", "-o", str(train_dir)])
    assert result.exit_code == 0, result.output

    library = tmp_path / "library.json"
    result = runner.invoke(cli, ["pretrain", "--tasks", str(tasks), "-k", "2", "--seed", "1", "-o", str(library)])
    assert result.exit_code == 0, result.output
    return {"tasks": tasks, "model": train_dir / "model.json", "library": library, "dir": tmp_path,
            "train_dir": train_dir}


def test_gen_tasks_writes_requested_count(tmp_path, runner):
    out = tmp_path / "parts.json"
    result = runner.invoke(cli, ["gen-tasks", "--count", "150", "--families", "15", "-o", str(out)])
    assert result.exit_code == 0, result.output
    tasks = load_tasks(str(out))
    assert len(tasks) == 150
    assert len({task.family for task in tasks}) == 15


def test_gen_tasks_requires_count(tmp_path, runner):
    result = runner.invoke(cli, ["gen-tasks", "-o", str(tmp_path / "x.json")])
    assert result.exit_code == 2
    assert "--count" in result.output


def test_train_preconds_writes_artifacts(workspace):
    train_dir = workspace["train_dir"]
    for name in ("training_data.csv", "model.json", "report.json"):
        assert (train_dir / name).exists()
    report = json.loads((train_dir / "report.json").read_text())
    assert report["rows"] == 144
    assert report["grad_check_max_rel_error"] < 1e-4


def test_pretrain_writes_library(workspace):
    library = load_library(str(workspace["library"]))
    assert len(library) == 2


def test_plan_methods_agree_on_the_optimum(workspace, runner):
    root = workspace["dir"]
    instance = root / "instance.json"
    bnb = root / "bnb.json"
    result = runner.invoke(cli, ["plan", "--tasks", str(workspace["tasks"]), "--model", str(workspace["model"]),
                                 "--library", str(workspace["library"]), "--instance-out", str(instance),
                                 "-o", str(bnb)])
    assert result.exit_code == 0, result.output
    assert "Objective" in result.output

    objectives = {}
    for method in ("adl-exhaustive", "adl-dp", "greedy", "ad", "cba", "alm"):
        out = root / f"{method}.json"
        result = runner.invoke(cli, ["plan", "--instance", str(instance), "--method", method,
                                     "--theta", "0.5", "-o", str(out)])
        assert result.exit_code == 0, result.output
        objectives[method] = load_plan(str(out)).objective

    best = load_plan(str(bnb)).objective
    assert best == pytest.approx(objectives["adl-exhaustive"], rel=1e-9)
    assert best == pytest.approx(objectives["adl-dp"], rel=1e-9)
    for method in ("greedy", "ad", "cba", "alm"):
        assert best <= objectives[method] + 1e-9


def test_plan_with_empty_library_ad_delegates(workspace, runner):
    out = workspace["dir"] / "ad.json"
    result = runner.invoke(cli, ["plan", "--tasks", str(workspace["tasks"]), "--model", str(workspace["model"]),
                                 "--method", "ad", "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert load_plan(str(out)).actions == [Action.DELEGATE] * 12


def test_plan_needs_inputs(runner):
    result = runner.invoke(cli, ["plan"])
    assert result.exit_code == 2


def test_oracle_guard_exits_with_error(tmp_path, runner):
    instance = tmp_path / "big.json"
    save_instance(make_instance([0.5] * 21), str(instance))
    result = runner.invoke(cli, ["plan", "--instance", str(instance), "--method", "adl-exhaustive",
                                 "-o", str(tmp_path / "p.json")])
    assert result.exit_code == 1
    assert "n <= 20" in result.output


def test_corrupt_model_exits_with_error(workspace, runner):
    broken = workspace["dir"] / "broken.json"
    text = workspace["model"].read_text()
    broken.write_text(text[:len(text) // 3])
    result = runner.invoke(cli, ["plan", "--tasks", str(workspace["tasks"]), "--model", str(broken),
                                 "-o", str(workspace["dir"] / "p.json")])
    assert result.exit_code == 1


def test_export_mip_and_simulate(tmp_path, runner):
    instance = tmp_path / "instance.json"
    save_instance(make_instance([0.2, 0.7, 0.1], {(1, 0): 0.9, (2, 0): 0.8, (2, 1): 0.3}), str(instance))

    lp = tmp_path / "adl.lp"
    result = runner.invoke(cli, ["export-mip", "--instance", str(instance), "-o", str(lp)])
    assert result.exit_code == 0, result.output
    assert "Binary" in lp.read_text()

    plan = tmp_path / "plan.json"
    assert runner.invoke(cli, ["plan", "--instance", str(instance), "-o", str(plan)]).exit_code == 0
    summary = tmp_path / "sim.csv"
    result = runner.invoke(cli, ["simulate", "--instance", str(instance), "--plan", str(plan),
                                 "--trials", "200", "--seed", "4", "-o", str(summary)])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(summary)
    assert frame.loc[0, "objective"] == pytest.approx(load_plan(str(plan)).objective)


def test_export_mip_cross_check(tmp_path, runner):
    pytest.importorskip("ortools.linear_solver.pywraplp")
    instance = tmp_path / "instance.json"
    save_instance(make_instance([0.0] * 4, {(i, 0): 0.95 for i in range(1, 4)}), str(instance))
    result = runner.invoke(cli, ["export-mip", "--instance", str(instance), "--cross-check",
                                 "-o", str(tmp_path / "adl.lp")])
    assert result.exit_code == 0, result.output


def test_bench_rejects_empty_config(tmp_path, runner):
    config = tmp_path / "empty.json"
    config.write_text("{}")
    result = runner.invoke(cli, ["bench", str(config)])
    assert result.exit_code == 2
    for field in ("domain", "n_tasks", "pretrain_levels", "seeds"):
        assert field in result.output


def test_bench_runs_small_experiment(tmp_path, runner):
    config = tmp_path / "bench.json"
    config.write_text(json.dumps({
        "domain": "block",
        "n_tasks": 4,
        "pretrain_levels": [0, 2],
        "seeds": [0, 1],
        "ground_count": 20,
        "train_m": 10,
        "train_n": 10,
        "mc_trials": 50,
        "check_oracles": True,
        "train": {"epochs": 5, "hidden_size": 8},
    }))
    out = tmp_path / "bench_out"
    result = runner.invoke(cli, ["bench", str(config), "-o", str(out)])
    assert result.exit_code == 0, result.output

    results = pd.read_csv(out / "results.csv")
    assert len(results) == 2 * 2 * 6
    assert set(results["method"]) == {"adl", "greedy", "ad", "cba(0.2)", "cba(0.5)", "alm"}
    for _, row in results.groupby(["level", "seed"]):
        adl = row.loc[row["method"] == "adl", "objective"].iloc[0]
        assert np.all(adl <= row["objective"] + 1e-9)
    for name in ("summary.csv", "deltas.csv", "config.json", "model.json", "training_data.csv"):
        assert (out / name).exists()


def test_check_setup(runner):
    result = runner.invoke(cli, ["check-setup"])
    assert result.exit_code == 0
    assert "status: success" in result.output


def test_instance_out_round_trips(workspace, runner):
    instance = workspace["dir"] / "literal.json"
    result = runner.invoke(cli, ["plan", "--tasks", str(workspace["tasks"]), "--model", str(workspace["model"]),
                                 "--mode", "literal", "--instance-out", str(instance),
                                 "-o", str(workspace["dir"] / "p.json")])
    assert result.exit_code == 0, result.output
    assert load_instance(str(instance)).mode == "literal_paper"
