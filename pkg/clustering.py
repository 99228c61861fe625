"""
Density-based clustering for batched-graph construction.

The pipeline is the HDBSCAN core: samples are mapped into a density-aware
space (core distances and mutual reachability), a minimum spanning tree of
that space gives the cluster hierarchy, and the flat clustering is the most
stable non-overlapping set of clusters in the condensed hierarchy.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.metrics import pairwise_distances

from config import ClusterConfig, PingError

logger = logging.getLogger(__name__)

NOISE = -1


class ClusteringError(PingError, ValueError):
    pass


class KTooLarge(ClusteringError):
    pass


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    num_clusters: int

    def sizes(self):
        return np.bincount(self.labels[self.labels >= 0], minlength=self.num_clusters)

    def to_text(self):
        """One line per sample: index, label."""
        frame = pd.DataFrame({"index": np.arange(len(self.labels)), "label": self.labels})
        return frame.to_csv(index=False, header=False)


def euclidean_distances(features):
    return pairwise_distances(np.asarray(features, dtype=np.float64), metric="euclidean")


def core_distances(features, k, distances=None):
    """
    Distance from each sample to its k-th nearest other sample.

    Args:
        features (np.ndarray): S x F matrix
        k (int): Neighbour rank, 1 <= k <= S - 1
        distances (np.ndarray): Optional precomputed S x S Euclidean distances

    Returns:
        np.ndarray: Length-S vector of core distances
    """
    n_samples = len(features)
    if not 1 <= k <= n_samples - 1:
        raise KTooLarge(f"k={k} must lie in [1, {n_samples - 1}]")
    dist = euclidean_distances(features) if distances is None else distances.copy()
    np.fill_diagonal(dist, np.inf)
    return np.partition(dist, k - 1, axis=1)[:, k - 1]


def mutual_reachability(features, core, distances=None):
    """
    Dense symmetric matrix of max(core_i, core_j, dist(i, j)), zero on the diagonal.
    """
    dist = euclidean_distances(features) if distances is None else distances
    mr = np.maximum(dist, np.maximum.outer(core, core))
    np.fill_diagonal(mr, 0.0)
    return mr


def minimum_spanning_tree(mr):
    """
    Prim's algorithm on a dense distance matrix.

    Ties are broken by (weight, min index, max index), which makes the tree unique.

    Returns:
        np.ndarray: (S - 1) x 3 rows of (i, j, weight) with i < j, in insertion order
    """
    n = mr.shape[0]
    if n < 2:
        return np.zeros((0, 3))
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best_w = mr[0].astype(np.float64).copy()
    best_from = np.zeros(n, dtype=np.int64)
    edges = np.zeros((n - 1, 3))

    for step in range(n - 1):
        candidates = np.flatnonzero(~in_tree)
        w = best_w[candidates]
        tied = candidates[w == w.min()]
        lo = np.minimum(tied, best_from[tied])
        hi = np.maximum(tied, best_from[tied])
        pick = tied[np.lexsort((hi, lo))[0]]
        i, j = sorted((int(best_from[pick]), int(pick)))
        edges[step] = (i, j, best_w[pick])
        in_tree[pick] = True

        new_w = mr[pick]
        cur_lo = np.minimum(np.arange(n), best_from)
        cur_hi = np.maximum(np.arange(n), best_from)
        new_lo = np.minimum(np.arange(n), pick)
        new_hi = np.maximum(np.arange(n), pick)
        better = (new_w < best_w) | (
            (new_w == best_w) & ((new_lo < cur_lo) | ((new_lo == cur_lo) & (new_hi < cur_hi)))
        )
        better &= ~in_tree
        best_w[better] = new_w[better]
        best_from[better] = pick
    return edges


def _single_linkage(mst, n):
    """Merge history from MST edges in ascending (weight, i, j) order."""
    order = np.lexsort((mst[:, 1], mst[:, 0], mst[:, 2]))
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)
    children = {}
    heights = {}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    next_id = n
    for row in mst[order]:
        a, b = find(int(row[0])), find(int(row[1]))
        parent[a] = parent[b] = next_id
        size[next_id] = size[a] + size[b]
        children[next_id] = (a, b)
        heights[next_id] = float(row[2])
        next_id += 1
    return children, heights, size


def _leaves(node, children, n):
    stack, out = [node], []
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            stack.extend(children[x])
    return out


def _condense(children, heights, size, n, min_cluster_size):
    """
    Condensed tree rows (parent_cluster, child, lambda, child_size).

    A split survives as two new clusters only when both sides keep at least
    min_cluster_size points; otherwise the smaller side falls out as points.
    """
    positive = [h for h in heights.values() if h > 0]
    cap = 1.0 / (min(positive) * 1e-3) if positive else 1.0

    def lam(h):
        return 1.0 / h if h > 0 else cap

    root = 2 * n - 2
    rows = []
    label = {root: n}
    next_label = n + 1
    stack = [root]
    while stack:
        node = stack.pop()
        left, right = children[node]
        lambda_value = lam(heights[node])
        cluster = label[node]
        big_left = size[left] >= min_cluster_size
        big_right = size[right] >= min_cluster_size
        if big_left and big_right:
            for child in (left, right):
                label[child] = next_label
                rows.append((cluster, next_label, lambda_value, int(size[child])))
                next_label += 1
                if child >= n:
                    stack.append(child)
        else:
            for child, big in ((left, big_left), (right, big_right)):
                if big:
                    label[child] = cluster
                    if child >= n:
                        stack.append(child)
                else:
                    rows.extend((cluster, p, lambda_value, 1) for p in _leaves(child, children, n))
    return rows


def _select_clusters(rows, n):
    """Excess-of-mass selection; the root is never selected."""
    root = n
    birth = {root: 0.0}
    for parent, child, lambda_value, child_size in rows:
        if child_size > 1 or child >= n:
            if child >= n and child != parent:
                birth.setdefault(child, lambda_value)
    cluster_ids = sorted(c for c in birth if c != root)
    stability = {c: 0.0 for c in birth}
    children_of = {c: [] for c in birth}
    for parent, child, lambda_value, child_size in rows:
        stability[parent] += (lambda_value - birth[parent]) * child_size
        if child in birth and child != parent:
            children_of[parent].append(child)

    selected = {c: True for c in cluster_ids}
    for c in sorted(cluster_ids, reverse=True):
        child_total = sum(stability[ch] for ch in children_of[c])
        if child_total > stability[c]:
            selected[c] = False
            stability[c] = child_total
        else:
            stack = list(children_of[c])
            while stack:
                ch = stack.pop()
                selected[ch] = False
                stack.extend(children_of[ch])
    return [c for c in cluster_ids if selected[c]], children_of


def extract_clusters(mst, cfg, n_samples=None):
    """
    Flat clustering from the MST by cluster stability.

    Args:
        mst (np.ndarray): Rows (i, j, weight) of a spanning tree
        cfg (ClusterConfig): min_cluster_size controls what counts as a cluster

    Returns:
        ClusterAssignment: Labels 0..M-1, or NOISE for points in no selected cluster.
        A tree with no surviving split comes back as one cluster.
    """
    n = len(mst) + 1 if n_samples is None else n_samples
    if n < 2:
        return ClusterAssignment(labels=np.full(n, NOISE, dtype=np.int64), num_clusters=0)
    children, heights, size = _single_linkage(np.asarray(mst, dtype=np.float64), n)
    rows = _condense(children, heights, size, n, cfg.min_cluster_size)
    chosen, children_of = _select_clusters(rows, n)
    if not chosen:
        return _root_cluster(rows, n, cfg.min_cluster_size)

    point_parent = {child: parent for parent, child, _, _ in rows if child < n}
    owner = {}
    for label_id, c in enumerate(chosen):
        stack = [c]
        while stack:
            x = stack.pop()
            owner[x] = label_id
            stack.extend(children_of.get(x, []))

    labels = np.full(n, NOISE, dtype=np.int64)
    for point, parent in point_parent.items():
        labels[point] = owner.get(parent, NOISE)
    return ClusterAssignment(labels=labels, num_clusters=len(chosen))


def _root_cluster(rows, n, min_cluster_size):
    """
    One cluster over the whole tree when no split survives condensing.

    Points that fell out at the root's first (lowest lambda) drop are noise,
    unless that drop is itself min_cluster_size points or more.
    """
    first = min(lambda_value for _, _, lambda_value, _ in rows)
    early = [child for _, child, lambda_value, _ in rows if lambda_value == first]
    labels = np.zeros(n, dtype=np.int64)
    if len(early) < min(min_cluster_size, n):
        labels[early] = NOISE
    return ClusterAssignment(labels=labels, num_clusters=1)


def relabel_noise(features, assignment):
    """Give every noise point the label of the nearest cluster centroid (Euclidean)."""
    labels = assignment.labels.copy()
    noise = np.flatnonzero(labels == NOISE)
    if len(noise) == 0 or assignment.num_clusters == 0:
        return assignment
    centroids = np.vstack([features[labels == c].mean(axis=0) for c in range(assignment.num_clusters)])
    nearest = np.argmin(pairwise_distances(features[noise], centroids), axis=1)
    labels[noise] = nearest
    logger.info(f"Relabelled {len(noise)} noise points to their nearest cluster centroid")
    return ClusterAssignment(labels=labels, num_clusters=assignment.num_clusters)


def cluster(features, cfg=None):
    """
    Full clustering pipeline with total coverage.

    core_distances -> mutual_reachability -> minimum_spanning_tree ->
    extract_clusters, then noise relabelled to the nearest centroid. Falls back
    to a single cluster when the data is too small or every point coincides.
    """
    cfg = cfg or ClusterConfig()
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    single = ClusterAssignment(labels=np.zeros(n, dtype=np.int64), num_clusters=1 if n else 0)
    if n < cfg.min_cluster_size or n < 2:
        logger.warning(f"{n} samples < min_cluster_size={cfg.min_cluster_size}; using one cluster")
        return single

    dist = euclidean_distances(features)
    k = min(cfg.k, n - 1)
    core = core_distances(features, k, distances=dist)
    mr = mutual_reachability(features, core, distances=dist)
    if not mr.any():
        return single
    mst = minimum_spanning_tree(mr)
    assignment = extract_clusters(mst, cfg, n_samples=n)
    logger.info(
        f"Clustering: {assignment.num_clusters} clusters, "
        f"{int((assignment.labels == NOISE).sum())} noise points before relabelling"
    )
    result = relabel_noise(features, assignment)
    logger.debug(f"Cluster sizes after relabelling: {result.sizes().tolist()}")
    return result
