import json

import numpy as np
import pytest

from evaluation import (
    DegenerateDesign,
    EvalReport,
    EvaluationError,
    compare_reports,
    dump_json,
    embed_and_regress,
    read_metrics,
    ridge_alpha,
)


def test_linear_embeddings_are_recovered(rng):
    emb = rng.normal(size=(50, 4))
    targets = emb @ np.array([1.0, -2.0, 0.5, 3.0]) + 1.5
    train, test = np.arange(40), np.arange(40, 50)
    assert embed_and_regress(emb, targets, train, test) < 1e-8


def test_zero_embeddings_predict_train_mean(rng):
    targets = rng.normal(size=20)
    train, test = np.arange(15), np.arange(15, 20)
    expected = np.mean((targets[test] - targets[train].mean()) ** 2)
    assert embed_and_regress(np.zeros((20, 3)), targets, train, test) == pytest.approx(expected, rel=1e-9)


def test_small_problem_matches_least_squares():
    emb = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    targets = np.array([1.0, 3.2, 4.9, 7.1, 10.0])
    train, test = np.arange(4), np.array([4])
    design = np.hstack([emb[train], np.ones((4, 1))])
    coef, *_ = np.linalg.lstsq(design, targets[train], rcond=None)
    expected = (coef[0] * 4.0 + coef[1] - 10.0) ** 2
    assert embed_and_regress(emb, targets, train, test) == pytest.approx(expected, rel=1e-4)


def test_ridge_alpha():
    assert ridge_alpha(np.ones((5, 2))) == 1e-6
    x = np.array([[0.0, 0.0], [2.0, 4.0]])
    # centred rows are (-1, -2) and (1, 2): diagonal of X^T X is (2, 8)
    assert ridge_alpha(x) == pytest.approx(1e-6 * 5.0)


@pytest.mark.parametrize(
    "train, test",
    [
        ([0, 1, 2], [2, 3]),
        ([0, 1], [7]),
        ([], [1, 2]),
        ([0, 1], []),
    ],
)
def test_bad_index_sets(train, test):
    with pytest.raises(EvaluationError):
        embed_and_regress(np.ones((5, 2)), np.arange(5.0), np.array(train, dtype=int), np.array(test, dtype=int))


def test_report_uses_population_std():
    report = EvalReport.from_folds("ssgnn", [1.0, 3.0])
    assert report.mean_mse == 2.0
    assert report.std_mse == 1.0


def test_metrics_exclude_timings():
    report = EvalReport.from_folds("dnn", [0.5, 0.7], train_seconds=12.0, construction_seconds=0.0)
    metrics = report.metrics_dict()
    assert "train_seconds" not in json.dumps(metrics)
    assert report.timings_dict()["total_seconds"] == 12.0


def test_metrics_file_round_trip(tmp_path):
    report = EvalReport.from_folds("ssbgnn", [0.25, 0.5], loss_curves=[[1.0, 0.5], [2.0, 1.0]], missing_rate=0.1)
    path = tmp_path / "metrics.json"
    path.write_text(dump_json(report.metrics_dict()))
    again = read_metrics(path)
    assert again.per_fold_mse == report.per_fold_mse
    assert again.missing_rate == 0.1
    assert dump_json(again.metrics_dict()) == dump_json(report.metrics_dict())


def test_incomplete_metrics_document():
    with pytest.raises(EvaluationError):
        EvalReport.from_dict({"method": "dnn"})


def test_compare_reports():
    reports = [
        EvalReport.from_folds("dnn", [2.0, 2.0]),
        EvalReport.from_folds("ssgnn", [1.5, 1.5]),
        EvalReport.from_folds("ssgnn", [1.0, 1.0], missing_rate=0.2),
    ]
    table = compare_reports(reports)
    assert table["improvement_vs_dnn_pct"].iloc[0] == 0.0
    assert table["improvement_vs_dnn_pct"].iloc[1] == pytest.approx(25.0)
    # no dnn run at 20% missing
    assert np.isnan(table["improvement_vs_dnn_pct"].iloc[2])


def test_diverged_embeddings_are_degenerate(rng):
    emb = rng.normal(size=(20, 3))
    emb[4, 1] = np.nan
    with pytest.raises(DegenerateDesign):
        embed_and_regress(emb, rng.normal(size=20), np.arange(15), np.arange(15, 20))
