"""
Command-line front end for the PING pipeline.

    python cli.py build-graph --input data.csv --target runtime --method bgc --out out/
    python cli.py run --input data.csv --target runtime --method ssgnn --folds 5 --out out/
    python cli.py sweep --input data.csv --target runtime --method ssbgnn --out out/
    python cli.py tune --input data.csv --target runtime --trials 20 --out out/
    python cli.py replay --manifest out/manifest.json
    python cli.py describe --input data.csv --target runtime
    python cli.py compare --metrics a/metrics.json b/metrics.json --out out/

Every command writes a manifest.json next to its outputs; `replay` re-runs
the command from it. Exit codes: 0 success, 1 data or I/O error, 2 usage error.
"""
import argparse
import json
import logging
import os
import sys
from datetime import datetime

from clustering import cluster
from config import (
    FLAT_KEYS,
    ClusterConfig,
    ConfigError,
    ConstructionConfig,
    ExperimentConfig,
    PingError,
    __version__,
    flatten_config,
    load_config_file,
    resolve_config,
)
from construction import bgc_warning, build_batched_graphs, build_single_graph
from dataset import describe, load_csv, preprocess
from evaluation import compare_reports, dump_json, read_metrics
from gnn import save_gnn
from graph_core import save_graph
from neural import save_dnn
from pipeline import DEFAULT_RATES, default_folds, missing_sweep, random_search_tune, run_experiment

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
MANIFEST_VERSION = 1
DEFAULTS = flatten_config(ExperimentConfig())


def setup_logging(out_dir, verbose=False):
    os.makedirs(out_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(out_dir, "run.log")),
            logging.StreamHandler(),
        ],
        force=True,
    )


def write_atomic(path, text):
    """Write text via a temporary file and a rename, so readers never see a partial file."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _config_from_args(args):
    """defaults < --config file < explicit flags."""
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {key: getattr(args, key) for key in FLAT_KEYS if getattr(args, key, None) is not None}
    return resolve_config(file_values, flags)


def _resolved_arguments(args, cfg=None):
    """The namespace with every flat config value filled in, enough to replay without the config file."""
    resolved = {k: v for k, v in vars(args).items() if k != "handler"}
    if cfg is not None:
        flat = flatten_config(cfg)
        for key in FLAT_KEYS:
            if key in resolved:
                resolved[key] = flat[key]
        resolved["config"] = None
    return resolved


def write_manifest(args, started_at, outputs, cfg=None, extra=None):
    manifest = {
        "version": MANIFEST_VERSION,
        "tool_version": __version__,
        "command": args.command,
        "arguments": _resolved_arguments(args, cfg),
        "config": cfg.to_dict() if cfg is not None else None,
        "inputs": [p for p in (getattr(args, "input", None),) if p] + list(getattr(args, "metrics", None) or []),
        "outputs": sorted(outputs),
        "seed": cfg.seed if cfg is not None else getattr(args, "seed", None),
        "started_at": started_at,
        "finished_at": datetime.now().isoformat(),
    }
    manifest.update(extra or {})
    path = os.path.join(args.out, "manifest.json")
    write_atomic(path, json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    logger.info(f"Manifest written to {path}")
    return path


def cmd_build_graph(args):
    """Build an SGC graph or BGC batch from a CSV and save it."""
    started_at = datetime.now().isoformat()
    construction = ConstructionConfig(
        n_neighbors=args.neighbors if args.neighbors is not None else DEFAULTS["neighbors"],
        method=args.graph_method,
        bgc_min_cluster_size=args.min_cluster_size or DEFAULTS["min_cluster_size"],
    )
    d = preprocess(load_csv(args.input, args.target))
    outputs = []
    graph_path = os.path.join(args.out, "graph.json")
    if construction.method == "sgc":
        graph = build_single_graph(d, construction)
        print(f"✅ SGC graph: {graph.n_nodes} nodes, {graph.n_edges} edges")
    else:
        warning = bgc_warning(d.n_samples)
        if warning:
            print(f"⚠️  {warning}")
            logger.warning(warning)
        cluster_cfg = ClusterConfig(
            min_cluster_size=construction.bgc_min_cluster_size, min_samples=args.min_samples
        )
        assignment = cluster(d.features, cluster_cfg)
        graph = build_batched_graphs(d, construction, assignment)
        clusters_path = os.path.join(args.out, "clusters.csv")
        write_atomic(clusters_path, assignment.to_text())
        outputs.append(clusters_path)
        n_nodes = sum(g.n_nodes for g in graph.graphs)
        n_edges = sum(g.n_edges for g in graph.graphs)
        print(f"✅ BGC batch: {len(graph.graphs)} clusters/graphs, {n_nodes} nodes, {n_edges} edges")
    save_graph(graph, graph_path)
    outputs.append(graph_path)
    write_manifest(
        args,
        started_at,
        outputs,
        extra={"construction": {"method": construction.method, "n_neighbors": construction.n_neighbors}},
    )
    return graph


def cmd_run(args):
    """Cross-validated run of one method; writes metrics.json and timings.json."""
    started_at = datetime.now().isoformat()
    cfg = _config_from_args(args)
    d = load_csv(args.input, args.target)
    folds = default_folds(d.n_samples, cfg)
    report = run_experiment(d, cfg, folds=folds, keep_models=args.save_model)

    metrics_path = os.path.join(args.out, "metrics.json")
    timings_path = os.path.join(args.out, "timings.json")
    folds_path = os.path.join(args.out, "folds.csv")
    write_atomic(metrics_path, dump_json(report.metrics_dict()))
    write_atomic(timings_path, dump_json(report.timings_dict()))
    write_atomic(folds_path, folds.to_text())
    outputs = [metrics_path, timings_path, folds_path]
    if args.save_model:
        model_path = os.path.join(args.out, "model.json")
        model = report.models[-1]
        (save_dnn if cfg.method == "dnn" else save_gnn)(model_path, model)
        outputs.append(model_path)

    for warning in report.warnings:
        print(f"⚠️  {warning}")
    print(f"✅ {cfg.method.upper()} {cfg.k_folds}-fold MSE: {report.mean_mse:.6f} ± {report.std_mse:.6f}")
    print(
        f"   construction {report.construction_seconds:.2f}s, training {report.train_seconds:.2f}s, "
        f"total {report.total_seconds:.2f}s"
    )
    write_manifest(args, started_at, outputs, cfg)
    return report


def _parse_rates(text):
    try:
        rates = [float(r) for r in text.split(",") if r.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--rates must be comma-separated numbers ({e})") from e
    if not rates or any(not 0.0 <= r <= 1.0 for r in rates):
        raise argparse.ArgumentTypeError("--rates must lie in [0, 1]")
    return rates


def cmd_sweep(args):
    """Missing-data sweep; writes sweep.csv plus one metrics file per rate."""
    started_at = datetime.now().isoformat()
    cfg = _config_from_args(args)
    d = load_csv(args.input, args.target)
    reports, table = missing_sweep(d, cfg, rates=args.rates)
    outputs = []
    for report in reports:
        path = os.path.join(args.out, f"metrics_rate_{report.missing_rate:.2f}.json")
        write_atomic(path, dump_json(report.metrics_dict()))
        outputs.append(path)
    table_path = os.path.join(args.out, "sweep.csv")
    write_atomic(table_path, table.to_csv(index=False))
    outputs.append(table_path)
    for report in reports:
        print(f"✅ rate {report.missing_rate:.0%}: MSE {report.mean_mse:.6f} ± {report.std_mse:.6f}")
    write_manifest(args, started_at, outputs, cfg)
    return table


def cmd_tune(args):
    """Random search; writes trials.csv and best_config.json (a valid --config file)."""
    started_at = datetime.now().isoformat()
    cfg = _config_from_args(args)
    d = load_csv(args.input, args.target)
    best, log = random_search_tune(d, cfg, trials=args.trials, seed=cfg.seed)
    log_path = os.path.join(args.out, "trials.csv")
    best_path = os.path.join(args.out, "best_config.json")
    write_atomic(log_path, log.to_csv(index=False))
    write_atomic(best_path, dump_json(flatten_config(best)))
    best_row = log.loc[log["best"]].iloc[0]
    print(f"✅ {args.trials} trials; best MSE {best_row['mse']:.6f} (trial {int(best_row['trial'])})")
    write_manifest(args, started_at, [log_path, best_path], cfg)
    return best, log


def cmd_describe(args):
    """Dataset summary: samples, features, target mean/std, missing cells."""
    started_at = datetime.now().isoformat()
    d = load_csv(args.input, args.target)
    table = describe(d)
    path = os.path.join(args.out, "describe.csv")
    write_atomic(path, table.to_csv(index=False))
    print(table.to_string(index=False))
    write_manifest(args, started_at, [path])
    return table


def cmd_compare(args):
    """Comparison table of metrics files, with percent improvement over the DNN."""
    started_at = datetime.now().isoformat()
    reports = [read_metrics(path) for path in args.metrics]
    table = compare_reports(reports, baseline=args.baseline)
    path = os.path.join(args.out, "comparison.csv")
    write_atomic(path, table.to_csv(index=False))
    print(table.to_string(index=False))
    write_manifest(args, started_at, [path])
    return table


def cmd_replay(args):
    """Re-execute the command recorded in a manifest."""
    with open(args.manifest, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION or manifest.get("command") not in COMMANDS:
        raise PingError(f"{args.manifest} is not a replayable manifest")
    replayed = argparse.Namespace(**manifest["arguments"])
    if args.out:
        replayed.out = args.out
    if manifest.get("tool_version") != __version__:
        print(f"⚠️  manifest was written by version {manifest.get('tool_version')}, this is {__version__}")
    setup_logging(replayed.out, getattr(replayed, "verbose", False))
    logger.info(f"Replaying '{replayed.command}' from {args.manifest}")
    return COMMANDS[replayed.command](replayed)


COMMANDS = {
    "build-graph": cmd_build_graph,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "tune": cmd_tune,
    "describe": cmd_describe,
    "compare": cmd_compare,
}


def _add_common(p, data=True):
    if data:
        p.add_argument("--input", required=True, help="Numeric CSV with a header row")
        p.add_argument("--target", required=True, help="Name of the runtime (target) column")
    p.add_argument("--out", default="out", help="Output directory (default: out)")
    p.add_argument("--verbose", action="store_true", help="Log at DEBUG level (default: off)")


def _add_experiment(p):
    d = DEFAULTS
    p.add_argument("--config", help="Flat JSON config file; explicit flags override it (default: none)")
    p.add_argument("--method", choices=["ssgnn", "ssbgnn", "dnn"], help=f"Model pipeline (default: {d['method']})")
    p.add_argument("--folds", type=int, help=f"Cross-validation folds (default: {d['folds']})")
    p.add_argument("--seed", type=int, help=f"Single seed for every random stage (default: {d['seed']})")
    p.add_argument("--n-jobs", dest="n_jobs", type=int, help=f"Folds run in parallel (default: {d['n_jobs']})")
    p.add_argument("--neighbors", type=int, help=f"Top-N cosine neighbours per sample (default: {d['neighbors']})")
    p.add_argument(
        "--min-cluster-size", dest="min_cluster_size", type=int,
        help=f"Smallest cluster for BGC (default: {d['min_cluster_size']})",
    )
    p.add_argument("--min-samples", dest="min_samples", type=int, help="Core-distance rank (default: min cluster size)")
    p.add_argument(
        "--missing-rate", dest="missing_rate", type=float,
        help=f"Fraction of feature cells blanked before imputation (default: {d['missing_rate']})",
    )
    p.add_argument("--epochs", type=int, help=f"Training epochs (default: {d['epochs']})")
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, help=f"Hidden layer width, 25-600 (default: {d['hidden_dim']})")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help=f"Optimizer step size (default: {d['learning_rate']})")
    p.add_argument("--dropout", type=float, help=f"Drop-out rate in [0, 1) (default: {d['dropout']})")
    p.add_argument("--optimizer", choices=["adam", "sgd"], help=f"Optimizer (default: {d['optimizer']})")
    p.add_argument("--activation", choices=["relu", "elu", "leaky_relu"], help=f"Hidden activation (default: {d['activation']})")
    p.add_argument("--aggregation", choices=["mean", "pool", "gcn"], help=f"Neighbour aggregation (default: {d['aggregation']})")
    p.add_argument(
        "--scorer-activation", dest="scorer_activation",
        choices=["relu", "elu", "leaky_relu", "sigmoid", "tanh"],
        help=f"Edge scorer activation (default: {d['scorer_activation']})",
    )
    p.add_argument("--l2-weight", dest="l2_weight", type=float, help=f"L2 regularization weight (default: {d['l2_weight']})")


def build_parser():
    parser = argparse.ArgumentParser(prog="ping", description="Performance Interaction Graph pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="Build an SGC graph or a BGC graph batch")
    _add_common(p)
    p.add_argument("--method", dest="graph_method", choices=["sgc", "bgc"], default="sgc", help="Construction (default: sgc)")
    p.add_argument("--neighbors", type=int, help=f"Top-N cosine neighbours per sample (default: {DEFAULTS['neighbors']})")
    p.add_argument(
        "--min-cluster-size", dest="min_cluster_size", type=int,
        help=f"Smallest cluster for BGC (default: {DEFAULTS['min_cluster_size']})",
    )
    p.add_argument("--min-samples", dest="min_samples", type=int, help="Core-distance rank (default: min cluster size)")
    p.add_argument("--seed", type=int, default=0, help="Recorded in the manifest; construction is deterministic (default: 0)")

    p = sub.add_parser("run", help="Cross-validated run of one method")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--save-model", dest="save_model", action="store_true", help="Write the last fold's model (default: off)")

    p = sub.add_parser("sweep", help="Missing-data sweep over several rates")
    _add_common(p)
    _add_experiment(p)
    p.add_argument(
        "--rates", type=_parse_rates, default=list(DEFAULT_RATES),
        help="Comma-separated missing rates (default: 0.05,0.1,0.15,0.2,0.25)",
    )

    p = sub.add_parser("tune", help="Random hyperparameter search")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--trials", type=int, default=20, help="Number of sampled configurations (default: 20)")

    p = sub.add_parser("describe", help="Summarize a dataset")
    _add_common(p)

    p = sub.add_parser("compare", help="Compare metrics files against a baseline")
    _add_common(p, data=False)
    p.add_argument("--metrics", nargs="+", required=True, help="metrics.json files to compare")
    p.add_argument("--baseline", default="dnn", help="Method the improvement is measured against (default: dnn)")

    p = sub.add_parser("replay", help="Re-run a command from its manifest.json")
    p.add_argument("--manifest", required=True, help="Path to a manifest.json")
    p.add_argument("--out", help="Write outputs here instead of the recorded directory (default: recorded)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            cmd_replay(args)
        else:
            if args.command == "tune" and args.trials < 1:
                parser.error("--trials must be at least 1")
            setup_logging(args.out, args.verbose)
            COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (PingError, OSError) as e:
        logger.error(str(e))
        print(f"❌ {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
