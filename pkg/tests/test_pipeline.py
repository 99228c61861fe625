import logging
from dataclasses import replace

import numpy as np
import pytest

from config import Hyperparameters, resolve_config
from dataset import make_folds, preprocess
from evaluation import DegenerateDesign
from graph_core import PingGraph
from neural import dnn_baseline_train
import pipeline
from pipeline import (
    HIDDEN_DIM_RANGE,
    HoldoutSplit,
    PipelineError,
    compare_methods,
    evaluate_graph,
    missing_sweep,
    random_search_tune,
    run_experiment,
    sample_hyperparameters,
    tuning_split,
)
from synthetic import make_linear_dataset, make_neighborhood_dataset


def quick_config(**flags):
    values = {"epochs": 3, "hidden_dim": 25, "neighbors": 3}
    values.update(flags)
    return resolve_config(flag_values=values)


@pytest.fixture
def dataset():
    return make_linear_dataset(n_samples=40, n_features=3, seed=3)


@pytest.mark.parametrize("method", ["ssgnn", "dnn"])
def test_one_mse_per_fold(dataset, method):
    report = run_experiment(dataset, quick_config(method=method))
    assert report.method == method
    assert len(report.per_fold_mse) == 5
    assert len(report.loss_curves) == 5
    assert all(len(curve) == 3 for curve in report.loss_curves)
    assert report.mean_mse == pytest.approx(np.mean(report.per_fold_mse))


def test_bgc_on_small_dataset_warns(caplog):
    d, _ = make_neighborhood_dataset(n_samples=100, seed=0)
    with caplog.at_level(logging.WARNING):
        report = run_experiment(d, quick_config(method="ssbgnn"))
    assert any("600" in w for w in report.warnings)
    assert "600" in caplog.text
    assert len(report.per_fold_mse) == 5


def test_runs_are_deterministic(dataset):
    cfg = quick_config(dropout=0.2, missing_rate=0.1)
    first = run_experiment(dataset, cfg)
    second = run_experiment(dataset, cfg)
    assert first.metrics_dict() == second.metrics_dict()


def test_edgeless_graph_reduces_to_dnn(dataset):
    d_pre = preprocess(dataset)
    hp = Hyperparameters(hidden_dim=25, epochs=5, dropout=0.3, aggregation="gcn", seed=11)
    folds = make_folds(d_pre.n_samples, 5, seed=0)
    edgeless = PingGraph.from_edges(d_pre.features, d_pre.target, np.arange(d_pre.n_samples), [])
    gnn = evaluate_graph(d_pre, edgeless, hp, folds)
    dnn = dnn_baseline_train(d_pre, hp, folds)
    np.testing.assert_allclose(gnn.per_fold_mse, dnn.per_fold_mse, rtol=1e-9)
    np.testing.assert_allclose(gnn.loss_curves, dnn.loss_curves, rtol=1e-9)


def test_test_targets_never_reach_training(dataset):
    split = HoldoutSplit(train=np.arange(30), test=np.arange(30, 40))
    cfg = quick_config(epochs=5)
    target = dataset.target.copy()
    target[30:] += 100.0
    shifted = replace(dataset, target=target)
    clean = run_experiment(dataset, cfg, folds=split)
    moved = run_experiment(shifted, cfg, folds=split)
    assert clean.loss_curves == moved.loss_curves
    assert moved.mean_mse > clean.mean_mse


def test_sweep_visits_rates_in_order(dataset):
    rates = (0.05, 0.10, 0.15, 0.20, 0.25)
    reports, table = missing_sweep(dataset, quick_config(method="dnn"), rates=rates)
    assert [r.missing_rate for r in reports] == list(rates)
    assert table["missing_rate"].tolist() == list(rates)


def test_zero_rate_sweep_is_the_clean_run(dataset):
    cfg = quick_config()
    reports, _ = missing_sweep(dataset, cfg, rates=(0.0,))
    assert reports[0].per_fold_mse == run_experiment(dataset, cfg).per_fold_mse


def test_sampled_hyperparameters_stay_in_range():
    rng = np.random.default_rng(0)
    draws = [sample_hyperparameters(rng, Hyperparameters()) for _ in range(10_000)]
    hidden = np.array([hp.hidden_dim for hp in draws])
    lr = np.array([hp.learning_rate for hp in draws])
    dropout = np.array([hp.dropout for hp in draws])
    assert hidden.min() >= HIDDEN_DIM_RANGE[0] and hidden.max() <= HIDDEN_DIM_RANGE[1]
    assert lr.min() >= 1e-5 and lr.max() <= 1e-1
    assert dropout.min() >= 0.0 and dropout.max() < 1.0
    # log-uniform: half the mass below the log midpoint 1e-3
    assert abs(np.mean(lr < 1e-3) - 0.5) < 0.03
    assert {hp.aggregation for hp in draws} == {"mean", "pool", "gcn"}


def test_tuning_split_is_disjoint():
    split = tuning_split(50, seed=0)
    assert len(split.test) == 10
    assert not set(split.train) & set(split.test)
    assert len(split.train) + len(split.test) == 50


def test_random_search_logs_every_trial(dataset):
    best, log = random_search_tune(dataset, quick_config(epochs=2), trials=3, seed=0)
    assert len(log) == 3
    assert log["best"].sum() == 1
    winner = log[log["best"]].iloc[0]
    assert winner["mse"] == log["mse"].min()
    assert best.hp.hidden_dim == winner["hidden_dim"]
    assert best.hp.epochs == 2


def test_random_search_survives_a_diverged_trial(dataset, monkeypatch, caplog):
    real = pipeline.run_experiment
    calls = []

    def first_diverges(*args, **kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise DegenerateDesign("embeddings contain NaN or infinite values; training diverged")
        return real(*args, **kwargs)

    monkeypatch.setattr(pipeline, "run_experiment", first_diverges)
    with caplog.at_level(logging.WARNING):
        best, log = random_search_tune(dataset, quick_config(epochs=2), trials=3, seed=0)
    assert len(log) == 3
    assert log["mse"].iloc[0] == np.inf
    assert not log["best"].iloc[0]
    assert np.isfinite(log.loc[log["best"], "mse"].iloc[0])
    assert "Trial 0 failed" in caplog.text


def test_random_search_with_no_finished_trial(dataset, monkeypatch):
    def diverge(*args, **kwargs):
        raise DegenerateDesign("training diverged")

    monkeypatch.setattr(pipeline, "run_experiment", diverge)
    with pytest.raises(PipelineError):
        random_search_tune(dataset, quick_config(epochs=2), trials=2, seed=0)


@pytest.mark.slow
def test_tuned_graph_model_beats_tuned_dnn_by_15_percent():
    base = {"epochs": 200, "neighbors": 5}
    totals = {"ssgnn": [], "dnn": []}
    for seed in range(3):
        d, _ = make_neighborhood_dataset(n_samples=800, n_features=8, seed=seed)
        for method in totals:
            cfg = resolve_config(flag_values={**base, "method": method, "seed": seed})
            best, _ = random_search_tune(d, cfg, trials=20, seed=seed)
            totals[method].append(run_experiment(d, best).mean_mse)
    assert np.mean(totals["ssgnn"]) <= 0.85 * np.mean(totals["dnn"])


@pytest.mark.slow
def test_full_missing_sweep_degrades(monkeypatch):
    d, _ = make_neighborhood_dataset(n_samples=800, n_features=8, seed=0)
    corrupted = []
    real = pipeline.inject_missing

    def counting(dataset, spec):
        out = real(dataset, spec)
        corrupted.append(int(out.missing_mask.sum()))
        return out

    monkeypatch.setattr(pipeline, "inject_missing", counting)
    cfg = resolve_config(flag_values={"method": "dnn", "epochs": 200, "hidden_dim": 64})
    rates = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25)
    reports, table = missing_sweep(d, cfg, rates=rates)
    assert len(reports) == 6
    assert len(table) == 6
    # 800 x 8 cells; rate 0 skips corruption
    assert corrupted == [320, 640, 960, 1280, 1600]
    mse = [r.mean_mse for r in reports]
    assert mse[-1] > mse[0]
    assert sum(later < earlier for earlier, later in zip(mse, mse[1:])) <= 1


def test_compare_methods_shares_folds(dataset):
    reports, table = compare_methods(dataset, quick_config(), methods=("ssgnn", "dnn"))
    assert [r.method for r in reports] == ["ssgnn", "dnn"]
    assert table.loc[table["method"] == "dnn", "improvement_vs_dnn_pct"].iloc[0] == 0.0
    expected = (reports[1].mean_mse - reports[0].mean_mse) / reports[1].mean_mse * 100.0
    assert table["improvement_vs_dnn_pct"].iloc[0] == pytest.approx(expected)
