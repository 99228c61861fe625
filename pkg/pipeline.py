"""
Experiment orchestration.

run_experiment takes a raw dataset through corruption, imputation,
standardization, PING construction, per-fold training and the linear
embedding assessment. missing_sweep and random_search_tune repeat it over
missing-value rates and sampled hyperparameters.
"""
import logging
import time
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from clustering import cluster
from config import (
    ACTIVATIONS,
    AGGREGATIONS,
    OPTIMIZERS,
    SCORER_ACTIVATIONS,
    STAGE_FOLDS,
    STAGE_MISSING,
    STAGE_MODEL,
    STAGE_TUNE,
    MissingSpec,
    PingError,
    derive_seed,
)
from construction import bgc_warning, build_batched_graphs, build_single_graph
from dataset import FoldPlan, inject_missing, make_folds, preprocess
from evaluation import EvalReport, compare_reports, embed_and_regress
from gnn import GnnModel, describe_model, extract_embeddings, train_batched, train_transductive
from graph_core import GraphBatch
from neural import dnn_baseline_train, training_rngs

logger = logging.getLogger(__name__)

DEFAULT_RATES = (0.05, 0.10, 0.15, 0.20, 0.25)
HIDDEN_DIM_RANGE = (25, 600)
LEARNING_RATE_RANGE = (1e-5, 1e-1)
TUNING_FOLDS = 5
TRIAL_COLUMNS = (
    "hidden_dim",
    "learning_rate",
    "dropout",
    "optimizer",
    "activation",
    "aggregation",
    "scorer_activation",
)


class PipelineError(PingError, ValueError):
    pass


@dataclass(frozen=True)
class HoldoutSplit:
    """A single train/test split with the FoldPlan splits() interface."""
    train: np.ndarray
    test: np.ndarray

    @property
    def k(self):
        return 1

    def splits(self):
        yield self.train, self.test


def prepare(d, missing):
    """Corrupt (if asked), impute and standardize."""
    corrupted = inject_missing(d, missing) if missing.rate > 0 else d
    return preprocess(corrupted)


def build_representation(d_pre, cfg):
    """
    The graph input for cfg.method.

    Returns:
        tuple: (PingGraph | GraphBatch | None, construction seconds, warnings)
    """
    if cfg.method == "dnn":
        return None, 0.0, []
    start = time.perf_counter()
    warnings = []
    if cfg.method == "ssgnn":
        graph = build_single_graph(d_pre, cfg.construction)
    else:
        warning = bgc_warning(d_pre.n_samples)
        if warning:
            warnings.append(warning)
        assignment = cluster(d_pre.features, cfg.cluster_cfg)
        graph = build_batched_graphs(d_pre, cfg.construction, assignment)
    return graph, time.perf_counter() - start, warnings


def _gnn_fold(graph, targets, train_idx, test_idx, hp, seed):
    init_rng, dropout_rng = training_rngs(seed)
    n_features = graph.graphs[0].node_features.shape[1] if isinstance(graph, GraphBatch) else graph.node_features.shape[1]
    model = GnnModel.init(n_features, hp, init_rng)
    logger.debug(f"GNN parameters: {describe_model(model)['parameters']}")
    start = time.perf_counter()
    if isinstance(graph, GraphBatch):
        _, history = train_batched(model, graph, train_idx, hp, rng=dropout_rng)
    else:
        _, history = train_transductive(model, graph, train_idx, hp, rng=dropout_rng)
    seconds = time.perf_counter() - start
    mse = embed_and_regress(extract_embeddings(model, graph), targets, train_idx, test_idx)
    return mse, seconds, history, model


def evaluate_graph(d_pre, graph, hp, folds, method="ssgnn", n_jobs=1, config_snapshot=None, keep_models=False):
    """
    Cross-validate the graph model on a prebuilt graph or batch.

    Any graph over the dataset's rows works, including hand-made ones
    (an edgeless graph reduces the model to a per-sample network).

    Returns:
        EvalReport: construction_seconds left at zero
    """
    jobs = (
        delayed(_gnn_fold)(graph, d_pre.target, train_idx, test_idx, hp, derive_seed(hp.seed, STAGE_MODEL, i))
        for i, (train_idx, test_idx) in enumerate(folds.splits())
    )
    results = Parallel(n_jobs=n_jobs)(jobs)
    for i, (mse, seconds, _, _) in enumerate(results):
        logger.info(f"{method.upper()} fold {i}: test MSE {mse:.6f} ({seconds:.2f}s)")
    return EvalReport.from_folds(
        method=method,
        per_fold_mse=[r[0] for r in results],
        train_seconds=sum(r[1] for r in results),
        loss_curves=[r[2] for r in results],
        config_snapshot=config_snapshot,
        models=[r[3] for r in results] if keep_models else None,
    )


def default_folds(n_samples, cfg):
    return make_folds(n_samples, cfg.k_folds, derive_seed(cfg.seed, STAGE_FOLDS))


def run_experiment(d, cfg, folds=None, keep_models=False):
    """
    Run one method under k-fold cross-validation.

    Args:
        d (TabularDataset): Raw dataset (not yet imputed or standardized)
        cfg (ExperimentConfig): Method, construction, hyperparameters, corruption
        folds (FoldPlan | HoldoutSplit): Defaults to a plan seeded from cfg.seed
        keep_models (bool): Attach the trained per-fold models to the report

    Returns:
        EvalReport: Per-fold MSE, mean and std, timings, warnings
    """
    folds = folds or default_folds(d.n_samples, cfg)
    if isinstance(folds, FoldPlan) and len(folds.assignments) != d.n_samples:
        raise PipelineError("fold plan does not cover the dataset")
    d_pre = prepare(d, cfg.missing)
    graph, construction_seconds, warnings = build_representation(d_pre, cfg)

    snapshot = cfg.to_dict()
    if cfg.method == "dnn":
        report = dnn_baseline_train(
            d_pre, cfg.hp, folds, n_jobs=cfg.n_jobs, config_snapshot=snapshot, keep_models=keep_models
        )
    else:
        report = evaluate_graph(
            d_pre, graph, cfg.hp, folds, method=cfg.method, n_jobs=cfg.n_jobs,
            config_snapshot=snapshot, keep_models=keep_models,
        )
    report.construction_seconds = construction_seconds
    report.warnings = warnings
    report.missing_rate = cfg.missing.rate
    logger.info(
        f"{cfg.method.upper()}: MSE {report.mean_mse:.6f} ± {report.std_mse:.6f} "
        f"(construction {construction_seconds:.2f}s, training {report.train_seconds:.2f}s)"
    )
    return report


def missing_sweep(d, cfg, rates=DEFAULT_RATES, folds=None):
    """
    run_experiment at each missing-value rate, in the given order.

    Every rate gets its own corruption seed; all rates share one fold plan.

    Returns:
        tuple: (list of EvalReport, comparison DataFrame)
    """
    folds = folds or default_folds(d.n_samples, cfg)
    reports = []
    for i, rate in enumerate(rates):
        missing = MissingSpec(rate=float(rate), seed=derive_seed(cfg.seed, STAGE_MISSING, i))
        logger.info(f"Missing-data sweep: rate {rate:.0%}")
        reports.append(run_experiment(d, replace(cfg, missing=missing), folds=folds))
    return reports, sweep_table(reports)


def sweep_table(reports):
    frame = pd.DataFrame(
        [
            {
                "method": r.method,
                "missing_rate": r.missing_rate,
                "mean_mse": r.mean_mse,
                "std_mse": r.std_mse,
                "per_fold_mse": ";".join(repr(m) for m in r.per_fold_mse),
            }
            for r in reports
        ]
    )
    return frame


def sample_hyperparameters(rng, base_hp):
    """
    One random-search draw.

    Uniform over each range and choice set, log-uniform for the learning rate.
    """
    low, high = np.log10(LEARNING_RATE_RANGE[0]), np.log10(LEARNING_RATE_RANGE[1])
    return replace(
        base_hp,
        hidden_dim=int(rng.integers(HIDDEN_DIM_RANGE[0], HIDDEN_DIM_RANGE[1] + 1)),
        learning_rate=float(min(10.0 ** rng.uniform(low, high), LEARNING_RATE_RANGE[1])),
        dropout=float(rng.uniform(0.0, 1.0)),
        optimizer=str(rng.choice(OPTIMIZERS)),
        activation=str(rng.choice(ACTIVATIONS)),
        aggregation=str(rng.choice(AGGREGATIONS)),
        scorer_activation=str(rng.choice(SCORER_ACTIVATIONS)),
    )


def tuning_split(n_samples, seed):
    """Fold 0 of a five-fold plan as the held-out tuning split."""
    plan = make_folds(n_samples, TUNING_FOLDS, derive_seed(seed, STAGE_TUNE))
    return HoldoutSplit(train=plan.train_indices(0), test=plan.test_indices(0))


def random_search_tune(d, base_cfg, trials, seed):
    """
    Random search over the hyperparameter ranges on one held-out split.

    Args:
        d (TabularDataset): Raw dataset
        base_cfg (ExperimentConfig): Everything except the sampled hyperparameters
        trials (int): Number of draws, at least 1
        seed (int): Seeds both the draws and the tuning split

    Returns:
        tuple: (best ExperimentConfig, trial log DataFrame with a best flag)
    """
    if trials < 1:
        raise PipelineError("trials must be at least 1")
    rng = np.random.default_rng(derive_seed(seed, STAGE_TUNE, 1))
    split = tuning_split(d.n_samples, seed)
    rows = []
    configs = []
    for trial in range(trials):
        cfg = replace(base_cfg, hp=sample_hyperparameters(rng, base_cfg.hp))
        try:
            mse = run_experiment(d, cfg, folds=split).mean_mse
        except PingError as e:
            logger.warning(f"Trial {trial} failed: {e}")
            mse = np.inf
        configs.append(cfg)
        rows.append({"trial": trial, **{k: getattr(cfg.hp, k) for k in TRIAL_COLUMNS}, "mse": mse})
        logger.info(f"Trial {trial}: MSE {mse:.6f} with {rows[-1]}")

    log = pd.DataFrame(rows)
    if not np.isfinite(log["mse"]).any():
        raise PipelineError(f"all {trials} tuning trials failed")
    best = int(np.argmin(log["mse"].to_numpy()))
    log["best"] = log["trial"] == best
    return configs[best], log


def compare_methods(d, cfg, methods=("ssgnn", "ssbgnn", "dnn"), folds=None):
    """Run several methods on shared folds and tabulate them against the DNN."""
    folds = folds or default_folds(d.n_samples, cfg)
    reports = []
    for method in methods:
        construction = replace(cfg.construction, method="bgc" if method == "ssbgnn" else "sgc")
        reports.append(run_experiment(d, replace(cfg, method=method, construction=construction), folds=folds))
    return reports, compare_reports(reports)
