"""
The PING graph G = (V, E, A): samples as nodes, inferred similarity relations
as undirected edges, and edge weights as the non-zero entries of A.

Edges are stored once per unordered pair as canonical (min, max) rows sorted
lexicographically; A is never materialised densely.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from config import PingError, __version__

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class GraphError(PingError, ValueError):
    pass


class IndexOutOfRange(GraphError, IndexError):
    pass


class MalformedFile(GraphError):
    def __init__(self, message, line=None, field_name=None):
        self.line = line
        self.field = field_name
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def canonical_edges(pairs):
    """Sort (min, max) rows and drop repeated unordered pairs and self-loops."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0)


@dataclass(frozen=True)
class PingGraph:
    node_features: np.ndarray
    node_targets: np.ndarray
    node_global_ids: np.ndarray
    edges: np.ndarray
    initial_edge_weights: np.ndarray

    @property
    def n_nodes(self):
        return self.node_features.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @classmethod
    def from_edges(cls, features, targets, global_ids, pairs):
        """Build a graph with unit initial weights from any list of node pairs."""
        edges = canonical_edges(pairs)
        return cls(
            node_features=np.asarray(features, dtype=np.float64),
            node_targets=np.asarray(targets, dtype=np.float64),
            node_global_ids=np.asarray(global_ids, dtype=np.int64),
            edges=edges,
            initial_edge_weights=np.ones(len(edges), dtype=np.float64),
        )

    def directed(self):
        """
        Both directions of every edge, grouped by destination.

        Returns:
            tuple: (src, dst, edge_index) arrays, edge_index pointing into self.edges
        """
        e = np.arange(self.n_edges)
        src = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        dst = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        edge_index = np.concatenate([e, e])
        order = np.lexsort((src, dst))
        return src[order], dst[order], edge_index[order]


@dataclass(frozen=True)
class GraphBatch:
    graphs: tuple
    # (S, 2) rows of (graph index, local node index), one per dataset row
    sample_to_graph: np.ndarray

    @classmethod
    def from_graphs(cls, graphs, n_samples):
        sample_to_graph = np.full((n_samples, 2), -1, dtype=np.int64)
        for g_index, g in enumerate(graphs):
            sample_to_graph[g.node_global_ids, 0] = g_index
            sample_to_graph[g.node_global_ids, 1] = np.arange(g.n_nodes)
        return cls(graphs=tuple(graphs), sample_to_graph=sample_to_graph)

    @property
    def n_samples(self):
        return self.sample_to_graph.shape[0]


@dataclass
class ValidationReport:
    """Pass/fail per invariant, with the offending edge or node indices."""
    violations: dict = field(default_factory=dict)

    def add(self, check, offending):
        self.violations[check] = [int(i) for i in np.atleast_1d(offending)]

    @property
    def passed(self):
        return not any(self.violations.values())

    def failed_checks(self):
        return [name for name, idx in self.violations.items() if idx]

    def __str__(self):
        if self.passed:
            return "all checks passed"
        return "; ".join(f"{name}: {idx[:10]}" for name, idx in self.violations.items() if idx)


def validate(g):
    """
    Check every PingGraph invariant.

    Returns:
        ValidationReport: One entry per check; an empty index list means pass
    """
    report = ValidationReport()
    n = g.n_nodes
    edges = np.asarray(g.edges).reshape(-1, 2)

    shape_bad = []
    if g.node_targets.shape != (n,):
        shape_bad.append(0)
    if g.node_global_ids.shape != (n,):
        shape_bad.append(1)
    if g.initial_edge_weights.shape != (len(edges),):
        shape_bad.append(2)
    report.add("shapes", shape_bad)

    out_of_range = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))
    report.add("edge_endpoints_in_range", out_of_range)
    report.add("no_self_loops", np.flatnonzero(edges[:, 0] == edges[:, 1]))

    unordered = np.sort(edges, axis=1)
    _, first = np.unique(unordered, axis=0, return_index=True)
    duplicated = np.ones(len(edges), dtype=bool)
    duplicated[first] = False
    report.add("no_duplicate_pairs", np.flatnonzero(duplicated))
    report.add("canonical_order", np.flatnonzero(edges[:, 0] > edges[:, 1]))

    if g.initial_edge_weights.shape == (len(edges),):
        report.add("unit_initial_weights", np.flatnonzero(g.initial_edge_weights != 1.0))
    else:
        report.add("unit_initial_weights", [])

    _, first_id = np.unique(g.node_global_ids, return_index=True)
    repeated = np.ones(len(g.node_global_ids), dtype=bool)
    repeated[first_id] = False
    report.add("distinct_global_ids", np.flatnonzero(repeated))

    report.add("finite_features", np.flatnonzero(~np.isfinite(g.node_features).all(axis=1)))
    return report


def validate_batch(batch):
    """Check the GraphBatch invariants plus every member graph."""
    report = ValidationReport()
    report.add("samples_covered", np.flatnonzero(batch.sample_to_graph[:, 0] < 0))
    report.add("no_single_node_graphs", [i for i, g in enumerate(batch.graphs) if g.n_nodes < 2])
    seen = np.concatenate([g.node_global_ids for g in batch.graphs]) if batch.graphs else np.array([])
    _, counts = np.unique(seen, return_counts=True)
    report.add("samples_in_one_graph", np.flatnonzero(counts > 1))
    for i, g in enumerate(batch.graphs):
        for name in validate(g).failed_checks():
            report.violations.setdefault(f"graph_{name}", []).append(i)
    return report


def degree(g, v):
    """Number of edges incident to node v."""
    if not 0 <= v < g.n_nodes:
        raise IndexOutOfRange(f"node {v} out of range for a graph with {g.n_nodes} nodes")
    return int(np.count_nonzero(g.edges == v))


def degrees(g):
    return np.bincount(g.edges.ravel(), minlength=g.n_nodes)


def _graph_to_dict(g):
    return {
        "nodes": [
            {
                "id": i,
                "global_id": int(g.node_global_ids[i]),
                "features": g.node_features[i].tolist(),
                "target": float(g.node_targets[i]),
            }
            for i in range(g.n_nodes)
        ],
        "edges": [
            {"i": int(a), "j": int(b), "weight": float(w)}
            for (a, b), w in zip(g.edges, g.initial_edge_weights)
        ],
    }


def _require(mapping, key, where):
    if not isinstance(mapping, dict) or key not in mapping:
        raise MalformedFile(f"missing {key!r}", field_name=f"{where}.{key}" if where else key)
    return mapping[key]


def _graph_from_dict(data, where):
    nodes = _require(data, "nodes", where)
    edges = _require(data, "edges", where)
    try:
        nodes = sorted(nodes, key=lambda node: node["id"])
        if [node["id"] for node in nodes] != list(range(len(nodes))):
            raise MalformedFile("node ids must be 0..n-1", field_name=f"{where}.nodes")
        features = np.array([node["features"] for node in nodes], dtype=np.float64)
        if len(nodes) == 0:
            features = features.reshape(0, 0)
        targets = np.array([node["target"] for node in nodes], dtype=np.float64)
        global_ids = np.array([node["global_id"] for node in nodes], dtype=np.int64)
        pairs = np.array([[e["i"], e["j"]] for e in edges], dtype=np.int64).reshape(-1, 2)
        weights = np.array([e["weight"] for e in edges], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFile(f"bad node or edge record ({e})", field_name=where or "graph") from e
    if features.ndim != 2:
        raise MalformedFile("feature vectors have different lengths", field_name=f"{where}.nodes")
    return PingGraph(
        node_features=features,
        node_targets=targets,
        node_global_ids=global_ids,
        edges=pairs,
        initial_edge_weights=weights,
    )


def serialize(g):
    """
    Render a PingGraph or GraphBatch as a JSON document.

    Floats are written with repr precision, so deserialize reproduces them bit for bit.
    """
    doc = {"version": FORMAT_VERSION, "tool_version": __version__}
    if isinstance(g, GraphBatch):
        doc["kind"] = "batch"
        doc["graphs"] = [_graph_to_dict(member) for member in g.graphs]
        doc["sample_to_graph"] = g.sample_to_graph.tolist()
    else:
        doc["kind"] = "graph"
        doc.update(_graph_to_dict(g))
    return json.dumps(doc, indent=1)


def deserialize(text):
    """Parse a document written by serialize."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedFile(e.msg, line=e.lineno) from e
    version = _require(doc, "version", "")
    if version != FORMAT_VERSION:
        raise MalformedFile(f"unsupported version {version!r}", field_name="version")
    kind = doc.get("kind", "graph")
    if kind == "graph":
        return _graph_from_dict(doc, "")
    if kind == "batch":
        graphs = [_graph_from_dict(member, f"graphs[{i}]") for i, member in enumerate(_require(doc, "graphs", ""))]
        mapping = np.array(_require(doc, "sample_to_graph", ""), dtype=np.int64).reshape(-1, 2)
        return GraphBatch(graphs=tuple(graphs), sample_to_graph=mapping)
    raise MalformedFile(f"unknown kind {kind!r}", field_name="kind")


def save_graph(g, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize(g))
    logger.info(f"Graph written to {path}")


def load_graph(path):
    with open(path, "r", encoding="utf-8") as f:
        return deserialize(f.read())


def graphs_equal(a, b):
    """Bit-exact comparison of two graphs."""
    return all(
        np.array_equal(getattr(a, name), getattr(b, name))
        for name in ("node_features", "node_targets", "node_global_ids", "edges", "initial_edge_weights")
    )
