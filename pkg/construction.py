"""
Initial PING construction from a preprocessed dataset.

Single-graph construction (SGC) links every sample to its top-N cosine
neighbours. Batched-graph construction (BGC) clusters the samples first and
runs the same procedure inside each cluster, producing one graph per cluster.

Neighbour selection follows the "N + 1" recipe: a sample's closest match
under cosine similarity is itself, so the top N + 1 are taken and the sample
is removed from its own list. The source array of the published pseudocode
is read as "the current sample index, repeated N + 1 times".
"""
import logging

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity

from config import PingError
from graph_core import GraphBatch, PingGraph

logger = logging.getLogger(__name__)

SAFE_BGC_SAMPLES = 600
# similarities equal to this many decimals count as ties
TIE_DECIMALS = 12
BGC_SMALL_DATASET_WARNING = (
    "BGC on {n} samples: more than 600 samples in a dataset is a safe number "
    "for batched-graph construction; smaller datasets risk single-node graphs"
)


class ConstructionError(PingError, ValueError):
    pass


class ZeroNormRow(ConstructionError):
    def __init__(self, row):
        self.row = row
        super().__init__(f"sample {row} has a zero feature vector; cosine similarity is undefined")


class NTooLarge(ConstructionError):
    pass


class EmptyClustering(ConstructionError):
    pass


class MissingValuesPresent(ConstructionError):
    pass


def cosine_similarity_matrix(features):
    """
    All-pairs cosine similarity.

    Args:
        features (np.ndarray): S x F matrix without missing values

    Returns:
        np.ndarray: S x S symmetric similarity matrix with unit diagonal
    """
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1)
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        raise ZeroNormRow(int(zero[0]))
    sim = cosine_similarity(features)
    np.fill_diagonal(sim, 1.0)
    return sim


def _ranked(sim_rows):
    # descending similarity, ties by lower index; rounding absorbs last-ulp noise
    # so parallel rows tie exactly
    return np.argsort(-np.round(sim_rows, TIE_DECIMALS), axis=-1, kind="stable")


def top_n_neighbors(sim, i, n_neighbors):
    """
    The N samples most similar to sample i, excluding i itself.

    Returns:
        np.ndarray: N indices sorted by descending similarity
    """
    return _top_n_all(sim, n_neighbors, rows=np.array([i]))[0]


def _top_n_all(sim, n_neighbors, rows=None):
    n_samples = sim.shape[0]
    if n_neighbors + 1 > n_samples:
        raise NTooLarge(f"N + 1 = {n_neighbors + 1} exceeds the {n_samples} available samples")
    rows = np.arange(n_samples) if rows is None else rows
    top = _ranked(sim[rows])[:, : n_neighbors + 1]
    is_self = top == rows[:, None]
    # drop the sample itself, or the (N+1)-th candidate when it did not rank
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), n_neighbors)
    keep = np.ones_like(top, dtype=bool)
    keep[np.arange(len(rows)), drop] = False
    return top[keep].reshape(len(rows), n_neighbors)


def _require_clean(d):
    if d.has_missing:
        raise MissingValuesPresent("impute the dataset before building a graph")


def _knn_graph(features, targets, global_ids, n_neighbors):
    n_samples = features.shape[0]
    sim = cosine_similarity_matrix(features)
    neighbors = _top_n_all(sim, n_neighbors)
    sources = np.repeat(np.arange(n_samples), n_neighbors)
    pairs = np.column_stack([sources, neighbors.ravel()])
    return PingGraph.from_edges(features, targets, global_ids, pairs)


def build_single_graph(d, cfg):
    """
    SGC: one node per sample, undirected edges to each sample's top-N neighbours.

    Args:
        d (TabularDataset): Imputed and standardized dataset
        cfg (ConstructionConfig): n_neighbors and method "sgc"

    Returns:
        PingGraph: Unit-weight graph without self-loops or repeated pairs
    """
    _require_clean(d)
    if cfg.method != "sgc":
        raise ConstructionError(f"build_single_graph needs method 'sgc', got {cfg.method!r}")
    g = _knn_graph(d.features, d.target, np.arange(d.n_samples), cfg.n_neighbors)
    logger.info(f"SGC graph: {g.n_nodes} nodes, {g.n_edges} edges (N={cfg.n_neighbors})")
    return g


def absorb_small_clusters(features, labels):
    """
    Merge noise points and singleton clusters into the cluster whose centroid is
    most cosine-similar, then renumber clusters 0..M-1 in order of first appearance.
    """
    labels = np.asarray(labels, dtype=np.int64).copy()
    ids, counts = np.unique(labels[labels >= 0], return_counts=True)
    viable = ids[counts >= 2]
    stray = np.flatnonzero(~np.isin(labels, viable))
    if len(viable) == 0:
        logger.warning("No cluster with two or more samples; using a single graph over all samples")
        return np.zeros(len(labels), dtype=np.int64)
    if len(stray):
        centroids = np.vstack([features[labels == c].mean(axis=0) for c in viable])
        sim = cosine_similarity(features[stray], centroids)
        labels[stray] = viable[np.argmax(sim, axis=1)]
        logger.warning(f"Merged {len(stray)} noise/singleton samples into their nearest clusters")
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = {old: new for new, old in enumerate(order)}
    return np.array([remap[label] for label in labels], dtype=np.int64)


def build_batched_graphs(d, cfg, clusters):
    """
    BGC: one SGC-style graph per cluster, with N capped at cluster size - 1.

    Args:
        d (TabularDataset): Imputed and standardized dataset
        cfg (ConstructionConfig): n_neighbors and method "bgc"
        clusters (ClusterAssignment): Labels covering every sample

    Returns:
        GraphBatch: Graphs ordered by cluster id, none with a single node
    """
    _require_clean(d)
    if cfg.method != "bgc":
        raise ConstructionError(f"build_batched_graphs needs method 'bgc', got {cfg.method!r}")
    if len(clusters.labels) != d.n_samples:
        raise EmptyClustering(f"clustering covers {len(clusters.labels)} samples, dataset has {d.n_samples}")
    if clusters.num_clusters == 0 and not (clusters.labels >= 0).any():
        raise EmptyClustering("clustering produced no clusters")
    if d.n_samples < SAFE_BGC_SAMPLES:
        logger.warning(BGC_SMALL_DATASET_WARNING.format(n=d.n_samples))

    labels = absorb_small_clusters(d.features, clusters.labels)
    graphs = []
    for c in range(labels.max() + 1):
        members = np.flatnonzero(labels == c)
        n_local = min(cfg.n_neighbors, len(members) - 1)
        graphs.append(_knn_graph(d.features[members], d.target[members], members, n_local))
    batch = GraphBatch.from_graphs(graphs, d.n_samples)
    logger.info(
        f"BGC batch: {len(graphs)} graphs, {sum(g.n_edges for g in graphs)} edges, "
        f"sizes {sorted((g.n_nodes for g in graphs), reverse=True)[:10]}"
    )
    return batch


def bgc_warning(n_samples):
    """The small-dataset warning text, or None when BGC is safe."""
    if n_samples < SAFE_BGC_SAMPLES:
        return BGC_SMALL_DATASET_WARNING.format(n=n_samples)
    return None