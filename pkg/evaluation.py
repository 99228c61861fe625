"""
Embedding assessment and experiment reports.

A trained model is judged by how well a plain linear regressor does when fed
its embeddings, so differences in test MSE come from embedding quality.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.linear_model import Ridge

from config import PingError

logger = logging.getLogger(__name__)

RIDGE_SCALE = 1e-6
METRICS_VERSION = 1


class EvaluationError(PingError, ValueError):
    pass


class DegenerateDesign(EvaluationError):
    pass


def ridge_alpha(train_embeddings):
    """1e-6 times the mean diagonal of the centred normal matrix X^T X."""
    centred = train_embeddings - train_embeddings.mean(axis=0)
    scale = float(np.sum(centred * centred)) / max(train_embeddings.shape[1], 1)
    return RIDGE_SCALE * scale if scale > 0 else RIDGE_SCALE


def fit_readout(embeddings, targets, train_idx):
    """Closed-form ridge regression with intercept on the train rows."""
    x = np.asarray(embeddings, dtype=np.float64)[train_idx]
    y = np.asarray(targets, dtype=np.float64)[train_idx]
    readout = Ridge(alpha=ridge_alpha(x), fit_intercept=True, solver="cholesky")
    return readout.fit(x, y)


def embed_and_regress(embeddings, targets, train_idx, test_idx):
    """
    Test MSE of a ridge readout fitted on frozen embeddings.

    Args:
        embeddings (np.ndarray): S x D matrix aligned to dataset rows
        targets (np.ndarray): Length-S targets
        train_idx (np.ndarray): Rows used for the fit
        test_idx (np.ndarray): Rows scored

    Returns:
        float: Mean squared error on test_idx
    """
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    n = len(targets)
    if np.intersect1d(train_idx, test_idx).size:
        raise EvaluationError("train and test rows overlap")
    for idx in (train_idx, test_idx):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise EvaluationError(f"row index out of range for {n} samples")
    if train_idx.size == 0 or test_idx.size == 0:
        raise EvaluationError("embed_and_regress needs non-empty train and test rows")
    used = np.asarray(embeddings, dtype=np.float64)[np.concatenate([train_idx, test_idx])]
    if not np.all(np.isfinite(used)):
        raise DegenerateDesign("embeddings contain NaN or infinite values; training diverged")

    readout = fit_readout(embeddings, targets, train_idx)
    pred = readout.predict(np.asarray(embeddings, dtype=np.float64)[test_idx])
    if not np.all(np.isfinite(pred)):
        raise DegenerateDesign("ridge readout produced non-finite predictions")
    diff = pred - np.asarray(targets, dtype=np.float64)[test_idx]
    return float(np.mean(diff * diff))


@dataclass
class EvalReport:
    """
    Cross-validated result of one method on one dataset.

    std_mse is the population standard deviation over folds.
    """
    method: str
    per_fold_mse: list
    mean_mse: float
    std_mse: float
    train_seconds: float = 0.0
    construction_seconds: float = 0.0
    config_snapshot: dict = None
    loss_curves: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    missing_rate: float = 0.0
    models: list = field(default=None, repr=False)

    @classmethod
    def from_folds(cls, method, per_fold_mse, **kwargs):
        per_fold = [float(m) for m in per_fold_mse]
        return cls(
            method=method,
            per_fold_mse=per_fold,
            mean_mse=float(np.mean(per_fold)),
            std_mse=float(np.std(per_fold)),
            **kwargs,
        )

    @property
    def total_seconds(self):
        return self.construction_seconds + self.train_seconds

    def metrics_dict(self):
        """Deterministic fields only; timings live in timings_dict."""
        return {
            "version": METRICS_VERSION,
            "method": self.method,
            "missing_rate": self.missing_rate,
            "per_fold_mse": self.per_fold_mse,
            "mean_mse": self.mean_mse,
            "std_mse": self.std_mse,
            "loss_curves": [list(map(float, curve)) for curve in self.loss_curves],
            "warnings": list(self.warnings),
            "config": self.config_snapshot,
        }

    def timings_dict(self):
        return {
            "method": self.method,
            "construction_seconds": self.construction_seconds,
            "train_seconds": self.train_seconds,
            "total_seconds": self.total_seconds,
        }

    @classmethod
    def from_dict(cls, metrics, timings=None):
        timings = timings or {}
        try:
            return cls(
                method=metrics["method"],
                per_fold_mse=list(metrics["per_fold_mse"]),
                mean_mse=metrics["mean_mse"],
                std_mse=metrics["std_mse"],
                train_seconds=timings.get("train_seconds", 0.0),
                construction_seconds=timings.get("construction_seconds", 0.0),
                config_snapshot=metrics.get("config"),
                loss_curves=metrics.get("loss_curves", []),
                warnings=metrics.get("warnings", []),
                missing_rate=metrics.get("missing_rate", 0.0),
            )
        except KeyError as e:
            raise EvaluationError(f"metrics document is missing {e}") from e


def dump_json(data):
    """Stable text rendering used for every metrics-like file."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def read_metrics(path):
    with open(path, "r", encoding="utf-8") as f:
        return EvalReport.from_dict(json.load(f))


def compare_reports(reports, baseline="dnn"):
    """
    Comparison table with the percent MSE improvement over the baseline.

    improvement = (mse_baseline - mse_method) / mse_baseline * 100

    Returns:
        pd.DataFrame: method, missing_rate, mean_mse, std_mse, improvement_vs_<baseline>_pct
    """
    frame = pd.DataFrame(
        [
            {
                "method": r.method,
                "missing_rate": r.missing_rate,
                "mean_mse": r.mean_mse,
                "std_mse": r.std_mse,
            }
            for r in reports
        ]
    )
    column = f"improvement_vs_{baseline}_pct"
    base = {r.missing_rate: r.mean_mse for r in reports if r.method == baseline}
    frame[column] = [
        (base[rate] - mse) / base[rate] * 100.0 if rate in base and base[rate] > 0 else np.nan
        for rate, mse in zip(frame["missing_rate"], frame["mean_mse"])
    ]
    return frame
