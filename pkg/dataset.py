"""
Tabular performance data: loading, preprocessing, corruption and fold plans.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from sklearn.impute import SimpleImputer
from sklearn.model_selection import KFold
from sklearn.preprocessing import StandardScaler

from config import PingError

logger = logging.getLogger(__name__)


class DatasetError(PingError, ValueError):
    """Base class for dataset problems."""


class MissingTargetColumn(DatasetError):
    def __init__(self, column, header):
        self.column = column
        super().__init__(f"target column {column!r} not in header {list(header)}")


class NonNumericCell(DatasetError):
    def __init__(self, row, col, value):
        self.row = row
        self.col = col
        # +2: one for the header line, one for 1-based line numbers
        super().__init__(f"non-numeric value {value!r} at data row {row} (line {row + 2}), column {col!r}")


class EmptyDataset(DatasetError):
    pass


class AlreadyStandardized(DatasetError):
    pass


class AllMissingColumn(DatasetError):
    def __init__(self, col):
        self.col = col
        super().__init__(f"column {col!r} has no observed values to impute from")


class NonEmptyMask(DatasetError):
    pass


class TooFewSamples(DatasetError):
    pass


@dataclass(frozen=True)
class TabularDataset:
    """
    Feature matrix, runtime target and missing-value mask.

    Missing cells hold NaN and are flagged in missing_mask; everything else is finite.
    """
    features: np.ndarray
    target: np.ndarray
    feature_names: tuple
    missing_mask: np.ndarray
    standardized: bool = False
    dropped_unlabeled: int = 0

    def __post_init__(self):
        n_samples, n_features = self.features.shape
        if self.target.shape != (n_samples,):
            raise DatasetError(f"target has shape {self.target.shape}, expected ({n_samples},)")
        if self.missing_mask.shape != self.features.shape:
            raise DatasetError("missing_mask shape does not match features")
        if len(self.feature_names) != n_features:
            raise DatasetError("feature_names length does not match feature columns")
        if not np.array_equal(np.isnan(self.features), self.missing_mask):
            raise DatasetError("missing_mask must flag exactly the NaN cells")
        if not np.all(np.isfinite(self.features[~self.missing_mask])):
            raise DatasetError("observed feature cells must be finite")
        if not np.all(np.isfinite(self.target)):
            raise DatasetError("targets must be finite")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def has_missing(self):
        return bool(self.missing_mask.any())

    @classmethod
    def from_arrays(cls, features, target, feature_names=None):
        features = np.asarray(features, dtype=np.float64)
        if feature_names is None:
            feature_names = tuple(f"f{j}" for j in range(features.shape[1]))
        return cls(
            features=features,
            target=np.asarray(target, dtype=np.float64),
            feature_names=tuple(feature_names),
            missing_mask=np.isnan(features),
        )


@dataclass(frozen=True)
class ColumnStats:
    """Per-column statistics kept for inverse transforms."""
    mean: np.ndarray
    std: np.ndarray

    def inverse_transform(self, features):
        return features * np.where(self.std > 0, self.std, 1.0) + self.mean


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def splits(self):
        for fold in range(self.k):
            yield self.train_indices(fold), self.test_indices(fold)

    def to_text(self):
        """One line per sample: index, fold id."""
        frame = pd.DataFrame({"index": np.arange(len(self.assignments)), "fold": self.assignments})
        return frame.to_csv(index=False, header=False)

    @classmethod
    def from_text(cls, text):
        rows = [line.split(",") for line in text.strip().splitlines() if line.strip()]
        assignments = np.zeros(len(rows), dtype=np.int64)
        for line_no, row in enumerate(rows, start=1):
            if len(row) != 2:
                raise DatasetError(f"fold plan line {line_no}: expected 'index,fold'")
            index, fold = int(row[0]), int(row[1])
            if not 0 <= index < len(rows):
                raise DatasetError(f"fold plan line {line_no}: index {index} out of range")
            assignments[index] = fold
        return cls(k=int(assignments.max()) + 1, assignments=assignments)


def load_csv(path, target_column):
    """
    Load a numeric CSV with a header row.

    Args:
        path (str): CSV file path
        target_column (str): Name of the runtime column

    Returns:
        TabularDataset: Features with empty cells flagged missing; rows
        without a target are dropped and counted in dropped_unlabeled
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise EmptyDataset(f"{path} is empty") from e
    except pd.errors.ParserError as e:
        raise DatasetError(f"{path} is not a well-formed CSV: {e}") from e
    if target_column not in raw.columns:
        raise MissingTargetColumn(target_column, raw.columns)

    raw = raw.apply(lambda col: col.str.strip())
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & (raw != "")
    if bad.to_numpy().any():
        row, col = np.argwhere(bad.to_numpy())[0]
        raise NonNumericCell(int(row), raw.columns[col], raw.iat[row, col])

    unlabeled = numeric[target_column].isna().to_numpy()
    dropped = int(unlabeled.sum())
    if dropped:
        noun = "row" if dropped == 1 else "rows"
        logger.warning(f"{dropped} unlabeled {noun} dropped from {path}")
    numeric = numeric.loc[~unlabeled]

    feature_frame = numeric.drop(columns=[target_column])
    if len(numeric) == 0 or feature_frame.shape[1] == 0:
        raise EmptyDataset(f"{path} has no labeled samples with features")

    features = feature_frame.to_numpy(dtype=np.float64)
    logger.info(f"Loaded {path}: {features.shape[0]} samples, {features.shape[1]} features")
    return TabularDataset(
        features=features,
        target=numeric[target_column].to_numpy(dtype=np.float64),
        feature_names=tuple(feature_frame.columns),
        missing_mask=np.isnan(features),
        dropped_unlabeled=dropped,
    )


def standardize(d):
    """
    Z-score every column over its observed entries (population std).

    Returns:
        tuple: (standardized TabularDataset, ColumnStats)
    """
    if d.standardized:
        raise AlreadyStandardized("dataset is already standardized")
    # StandardScaler ignores NaN when fitting and passes it through on transform;
    # zero-variance columns get scale 1, so they centre to exactly zero.
    scaler = StandardScaler()
    features = scaler.fit_transform(d.features)
    stats = ColumnStats(mean=scaler.mean_.copy(), std=np.sqrt(scaler.var_))
    return replace(d, features=features, standardized=True), stats


def impute_mean(d):
    """Replace each missing cell with its column's observed mean."""
    if not d.has_missing:
        return d
    all_missing = d.missing_mask.all(axis=0)
    if all_missing.any():
        raise AllMissingColumn(d.feature_names[int(np.argmax(all_missing))])
    imputer = SimpleImputer(strategy="mean")
    features = imputer.fit_transform(d.features)
    logger.info(f"Imputed {int(d.missing_mask.sum())} missing cells with column means")
    return replace(d, features=features, missing_mask=np.zeros_like(d.missing_mask))


def corrupted_cell_count(spec, n_samples, n_features):
    # round half up
    return int(math.floor(spec.rate * n_samples * n_features + 0.5))


def inject_missing(d, spec):
    """
    Blank out round(rate * S * F) feature cells chosen uniformly without replacement.

    Args:
        d (TabularDataset): Clean dataset (no missing cells)
        spec (MissingSpec): Rate and seed

    Returns:
        TabularDataset: Copy with the chosen cells set to NaN; targets untouched
    """
    if d.has_missing:
        raise NonEmptyMask("inject_missing expects a dataset without missing cells")
    count = corrupted_cell_count(spec, d.n_samples, d.n_features)
    if count == 0:
        return d
    rng = np.random.default_rng(spec.seed)
    cells = rng.choice(d.features.size, size=count, replace=False)
    features = d.features.copy()
    features.flat[cells] = np.nan
    logger.info(f"Injected {count} missing cells ({spec.rate:.0%} of {d.features.size})")
    return replace(d, features=features, missing_mask=np.isnan(features))


def make_folds(n_samples, k, seed):
    """
    Random partition of range(n_samples) into k folds whose sizes differ by at most one.
    """
    if k < 2 or n_samples < k:
        raise TooFewSamples(f"need k >= 2 and at least k samples, got k={k}, S={n_samples}")
    assignments = np.empty(n_samples, dtype=np.int64)
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    for fold, (_, test_idx) in enumerate(splitter.split(np.zeros((n_samples, 1)))):
        assignments[test_idx] = fold
    return FoldPlan(k=k, assignments=assignments)


def describe(d):
    """Summary row in the style of a dataset description table."""
    return pd.DataFrame(
        [
            {
                "samples": d.n_samples,
                "features": d.n_features,
                "target_mean": float(np.mean(d.target)),
                "target_std": float(np.std(d.target)),
                "missing_cells": int(d.missing_mask.sum()),
            }
        ]
    )


def preprocess(d):
    """Impute, then standardize. Construction only ever sees the result."""
    imputed = impute_mean(d)
    standardized, _ = standardize(imputed)
    return standardized
