import argparse
import json
import os

import numpy as np
import pandas as pd
import pytest

from cli import build_parser, main
from dataset import load_csv, preprocess
from graph_core import load_graph
from synthetic import make_linear_dataset, make_neighborhood_dataset

AIRFOIL = os.path.join(os.path.dirname(__file__), "data", "airfoil_self_noise.csv")

QUICK = ["--epochs", "2", "--hidden-dim", "25", "--neighbors", "3"]


@pytest.fixture
def data_csv(csv_path):
    return csv_path(make_linear_dataset(n_samples=50, n_features=4, seed=1))


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def brute_force_edges(features, n_neighbors):
    unit = features / np.linalg.norm(features, axis=1, keepdims=True)
    sim = unit @ unit.T
    edges = set()
    for i in range(len(features)):
        others = sorted((j for j in range(len(features)) if j != i), key=lambda j: (-sim[i, j], j))
        edges.update((min(i, j), max(i, j)) for j in others[:n_neighbors])
    return edges


def test_build_graph_sgc(data_csv, tmp_path):
    out = tmp_path / "graph"
    assert main(["build-graph", "--input", data_csv, "--target", "runtime", "--neighbors", "3", "--out", str(out)]) == 0
    g = load_graph(out / "graph.json")
    d = preprocess(load_csv(data_csv, "runtime"))
    assert g.n_nodes == 50
    assert g.n_edges == len(brute_force_edges(d.features, 3))
    manifest = read_json(out / "manifest.json")
    assert manifest["command"] == "build-graph"
    assert str(out / "graph.json") in manifest["outputs"]


def test_build_graph_bgc_warns(csv_path, tmp_path, capsys):
    d, _ = make_neighborhood_dataset(n_samples=100, seed=0)
    out = tmp_path / "bgc"
    code = main(["build-graph", "--input", csv_path(d), "--target", "runtime", "--method", "bgc", "--out", str(out)])
    assert code == 0
    assert "600" in capsys.readouterr().out
    assert (out / "clusters.csv").exists()
    labels = pd.read_csv(out / "clusters.csv", header=None)[1]
    assert len(labels) == 100
    assert (labels >= 0).all()


def test_missing_target_is_a_usage_error(data_csv):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--input", data_csv])
    assert exc.value.code == 2


def test_run_writes_metrics_and_manifest(data_csv, tmp_path):
    out = tmp_path / "run"
    argv = ["run", "--input", data_csv, "--target", "runtime", "--folds", "5", "--missing-rate", "0.25", "--out", str(out)]
    assert main(argv + QUICK) == 0
    metrics = read_json(out / "metrics.json")
    assert len(metrics["per_fold_mse"]) == 5
    assert metrics["missing_rate"] == 0.25
    assert "total_seconds" in read_json(out / "timings.json")
    manifest = read_json(out / "manifest.json")
    assert manifest["arguments"]["missing_rate"] == 0.25
    assert manifest["config"]["missing"]["rate"] == 0.25
    assert (out / "run.log").exists()


def test_replay_reproduces_metrics(data_csv, tmp_path):
    first = tmp_path / "first"
    assert main(["run", "--input", data_csv, "--target", "runtime", "--dropout", "0.2", "--out", str(first)] + QUICK) == 0
    second = tmp_path / "second"
    assert main(["replay", "--manifest", str(first / "manifest.json"), "--out", str(second)]) == 0
    assert (second / "metrics.json").read_bytes() == (first / "metrics.json").read_bytes()


def test_config_file_is_overridden_by_flags(data_csv, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"epochs": 4, "hidden_dim": 30, "method": "dnn"}))
    out = tmp_path / "cfg"
    argv = ["run", "--input", data_csv, "--target", "runtime", "--config", str(config), "--epochs", "2", "--out", str(out)]
    assert main(argv) == 0
    hp = read_json(out / "metrics.json")["config"]["hp"]
    assert hp["epochs"] == 2
    assert hp["hidden_dim"] == 30


def test_sweep_writes_one_row_per_rate(data_csv, tmp_path):
    out = tmp_path / "sweep"
    argv = ["sweep", "--input", data_csv, "--target", "runtime", "--method", "dnn", "--rates", "0.05,0.15", "--out", str(out)]
    assert main(argv + QUICK) == 0
    table = pd.read_csv(out / "sweep.csv")
    assert table["missing_rate"].tolist() == [0.05, 0.15]
    assert (out / "metrics_rate_0.15.json").exists()


def test_tune_logs_trials(data_csv, tmp_path):
    out = tmp_path / "tune"
    assert main(["tune", "--input", data_csv, "--target", "runtime", "--trials", "3", "--out", str(out)] + QUICK) == 0
    trials = pd.read_csv(out / "trials.csv")
    assert len(trials) == 3
    assert trials["best"].sum() == 1
    assert trials["hidden_dim"].between(25, 600).all()
    assert trials["learning_rate"].between(1e-5, 1e-1).all()
    best = read_json(out / "best_config.json")
    assert best["hidden_dim"] == trials.loc[trials["best"], "hidden_dim"].iloc[0]


def test_compare_uses_dnn_baseline(data_csv, tmp_path):
    for method in ("dnn", "ssgnn"):
        assert main(["run", "--input", data_csv, "--target", "runtime", "--method", method,
                     "--out", str(tmp_path / method)] + QUICK) == 0
    out = tmp_path / "cmp"
    paths = [str(tmp_path / m / "metrics.json") for m in ("dnn", "ssgnn")]
    assert main(["compare", "--metrics", *paths, "--out", str(out)]) == 0
    table = pd.read_csv(out / "comparison.csv")
    assert table["improvement_vs_dnn_pct"].iloc[0] == 0.0


def test_every_option_documents_its_default():
    parser = build_parser()
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sub in subparsers.choices.items():
        for action in sub._actions:
            if action.required or isinstance(action, argparse._HelpAction):
                continue
            assert "default" in (action.help or ""), f"{name} {action.option_strings}"


def test_bad_csv_exits_with_one(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,runtime\n1,x,3\n")
    assert main(["run", "--input", str(path), "--target", "runtime", "--out", str(tmp_path / "o")]) == 1
    assert main(["run", "--input", str(tmp_path / "absent.csv"), "--target", "runtime",
                 "--out", str(tmp_path / "o")]) == 1
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["describe", "--input", str(empty), "--target", "runtime", "--out", str(tmp_path / "o")]) == 1


def test_out_of_range_hidden_dim_exits_with_two(data_csv, tmp_path):
    assert main(["run", "--input", data_csv, "--target", "runtime", "--hidden-dim", "5",
                 "--out", str(tmp_path / "o")]) == 2


@pytest.mark.slow
@pytest.mark.skipif(not os.path.exists(AIRFOIL), reason="airfoil CSV not available")
def test_airfoil_smoke(tmp_path, capsys):
    target = pd.read_csv(AIRFOIL, nrows=0).columns[-1]
    for method in ("ssgnn", "ssbgnn", "dnn"):
        out = tmp_path / method
        argv = ["run", "--input", AIRFOIL, "--target", target, "--method", method, "--epochs", "500",
                "--out", str(out)]
        assert main(argv) == 0
        metrics = read_json(out / "metrics.json")
        assert len(metrics["per_fold_mse"]) == 5
        assert np.isfinite(metrics["mean_mse"])
        assert metrics["warnings"] == []
    assert "600" not in capsys.readouterr().out
