"""
The self-supervised graph model.

An edge scorer refines every edge weight from its endpoint features
(w = exp(raw) * w_init, so fresh parameters give w = 1), two GraphSAGE-style
layers pass weighted messages with mean, max-pool or gcn aggregation, and a
linear head predicts the target. The output of the second layer is the
embedding handed to the linear readout.

All gradients are hand-derived; the graph is processed as directed edge
lists grouped by destination so every aggregation is a segment operation.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from config import Hyperparameters
from graph_core import GraphBatch
from neural import (
    EmptyMask,
    NeuralError,
    OptimizerState,
    activate,
    activation_grad,
    as_rng,
    dropout_mask,
    glorot_uniform,
    load_checkpoint,
    masked_loss,
    optimizer_step,
    save_checkpoint,
    train_loop,
    training_rngs,
)

logger = logging.getLogger(__name__)

N_LAYERS = 2
SCORER_PARAMS = ("scorer.bias", "scorer.weights")


@dataclass(frozen=True)
class _Structure:
    """Directed view of a graph: both directions of each edge, grouped by destination."""
    src: np.ndarray
    dst: np.ndarray
    edge_index: np.ndarray
    # destinations with at least one incoming edge, and where their segment starts
    seg_nodes: np.ndarray
    seg_starts: np.ndarray

    @classmethod
    def of(cls, g):
        src, dst, edge_index = g.directed()
        seg_nodes, seg_starts = np.unique(dst, return_index=True)
        return cls(src, dst, edge_index, seg_nodes, seg_starts)


def _segment_sum(values, index, n):
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, index, values)
    return out


class EdgeScorer:
    """View of the scorer parameters: one dense unit over concat(x_i, x_j)."""

    def __init__(self, params, activation):
        self.weights = params["scorer.weights"]
        self.bias = params["scorer.bias"]
        self.activation = activation

    def hidden(self, g):
        pairs = np.hstack([g.node_features[g.edges[:, 0]], g.node_features[g.edges[:, 1]]])
        return activate(self.activation, pairs)

    def weights_for(self, g):
        if g.n_edges == 0:
            return np.zeros(0), np.zeros((0, 2 * g.node_features.shape[1]))
        hidden = self.hidden(g)
        raw = hidden @ self.weights[0] + self.bias[0]
        return np.exp(raw) * g.initial_edge_weights, hidden


def aggregate(kind, h_v, neighbor_states, weights, pool_layer=None, activation="relu"):
    """
    Aggregate one node's weighted neighbourhood.

    Args:
        kind (str): "mean", "pool" or "gcn"
        h_v (np.ndarray): State of the node itself
        neighbor_states (np.ndarray): k x d states of its neighbours (k may be 0)
        weights (np.ndarray): Length-k edge weights
        pool_layer (DenseLayer): d -> d transform, pool only
        activation (str): Applied after the pool transform

    Returns:
        np.ndarray: Aggregate vector; zeros for an isolated node (mean, pool)
    """
    h_v = np.asarray(h_v, dtype=np.float64)
    states = np.asarray(neighbor_states, dtype=np.float64).reshape(-1, h_v.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if kind == "gcn":
        return (h_v + weights @ states) / (1.0 + weights.sum())
    if len(states) == 0:
        return np.zeros_like(h_v)
    if kind == "mean":
        return weights @ states / weights.sum()
    if kind == "pool":
        messages = weights[:, None] * states
        pooled = activate(activation, messages @ pool_layer.weights.T + pool_layer.bias)
        return pooled.max(axis=0)
    raise NeuralError(f"unknown aggregation {kind!r}")


class GnnModel:
    """Edge scorer, two SAGE layers and a linear head: F -> hidden -> hidden -> 1."""

    def __init__(self, params, hp, n_features):
        self.params = params
        self.hp = hp
        self.n_features = n_features

    @classmethod
    def init(cls, n_features, hp, seed):
        """
        Glorot-uniform weights, zero biases, zero scorer.

        Draw order per layer is neighbor_weights, self_weights, pool_weights,
        then the head, so a gcn model draws exactly what a DnnModel does.
        """
        rng = as_rng(seed)
        params = {
            "scorer.weights": np.zeros((1, 2 * n_features)),
            "scorer.bias": np.zeros(1),
        }
        dims = [n_features, hp.hidden_dim, hp.hidden_dim]
        for layer in range(N_LAYERS):
            d_in, d_out = dims[layer], dims[layer + 1]
            prefix = f"sage_{layer}"
            params[f"{prefix}.neighbor_weights"] = glorot_uniform(rng, d_out, d_in)
            if hp.aggregation != "gcn":
                params[f"{prefix}.self_weights"] = glorot_uniform(rng, d_out, d_in)
            if hp.aggregation == "pool":
                params[f"{prefix}.pool_weights"] = glorot_uniform(rng, d_in, d_in)
                params[f"{prefix}.pool_bias"] = np.zeros(d_in)
            params[f"{prefix}.bias"] = np.zeros(d_out)
        params["head.weights"] = glorot_uniform(rng, 1, hp.hidden_dim)
        params["head.bias"] = np.zeros(1)
        return cls(dict(sorted(params.items())), hp, n_features)

    def scorer(self, params=None):
        return EdgeScorer(self.params if params is None else params, self.hp.scorer_activation)

    @property
    def frozen(self):
        return SCORER_PARAMS if self.hp.freeze_scorer else ()

    def _aggregate(self, params, prefix, h, w_dir, st, n):
        kind = self.hp.aggregation
        messages = w_dir[:, None] * h[st.src]
        if kind == "pool":
            agg = np.zeros_like(h)
            cache = {"messages": messages}
            if len(st.src):
                pre = messages @ params[f"{prefix}.pool_weights"].T + params[f"{prefix}.pool_bias"]
                pooled = activate(self.hp.activation, pre)
                agg[st.seg_nodes] = np.maximum.reduceat(pooled, st.seg_starts, axis=0)
                # first edge attaining the max in each segment and column
                hit = pooled == agg[st.dst]
                candidates = np.where(hit, np.arange(len(st.src))[:, None], len(st.src))
                cache.update(pre=pre, pooled=pooled, argmax=np.minimum.reduceat(candidates, st.seg_starts, axis=0))
            return agg, cache
        total = np.bincount(st.dst, weights=w_dir, minlength=n)
        summed = _segment_sum(messages, st.dst, n)
        if kind == "gcn":
            denom = 1.0 + total
            return (h + summed) / denom[:, None], {"denom": denom}
        denom = np.where(total > 0, total, 1.0)
        agg = np.where(total[:, None] > 0, summed / denom[:, None], 0.0)
        return agg, {"denom": denom, "has_neighbors": total > 0}

    def _aggregate_backward(self, params, prefix, h, w_dir, st, agg, cache, d_agg, grads):
        """Returns (d_h, d_w_dir) and writes pool parameter gradients into grads."""
        kind = self.hp.aggregation
        n = h.shape[0]
        if kind == "pool":
            d_h = np.zeros_like(h)
            d_w = np.zeros(len(st.src))
            pool_w = params[f"{prefix}.pool_weights"]
            if len(st.src) == 0:
                grads[f"{prefix}.pool_weights"] = np.zeros_like(pool_w)
                grads[f"{prefix}.pool_bias"] = np.zeros(pool_w.shape[0])
                return d_h, d_w
            d_pooled = np.zeros_like(cache["pooled"])
            cols = np.broadcast_to(np.arange(h.shape[1]), cache["argmax"].shape)
            np.add.at(d_pooled, (cache["argmax"], cols), d_agg[st.seg_nodes])
            d_pre = d_pooled * activation_grad(self.hp.activation, cache["pre"], cache["pooled"])
            grads[f"{prefix}.pool_weights"] = d_pre.T @ cache["messages"]
            grads[f"{prefix}.pool_bias"] = d_pre.sum(axis=0)
            d_messages = d_pre @ pool_w
            d_h = _segment_sum(w_dir[:, None] * d_messages, st.src, n)
            d_w = np.sum(d_messages * h[st.src], axis=1)
            return d_h, d_w
        denom = cache["denom"]
        scaled = d_agg / denom[:, None]
        if kind == "mean":
            scaled = np.where(cache["has_neighbors"][:, None], scaled, 0.0)
            d_h = np.zeros_like(h)
        else:
            d_h = scaled.copy()
        d_h += _segment_sum(w_dir[:, None] * scaled[st.dst], st.src, n)
        d_w = np.sum(scaled[st.dst] * (h[st.src] - agg[st.dst]), axis=1)
        return d_h, d_w

    def forward(self, g, training=False, rng=None, params=None, structure=None):
        """
        Returns:
            tuple: (predictions, embeddings, cache)
        """
        params = self.params if params is None else params
        st = structure or _Structure.of(g)
        n = g.n_nodes
        w, scorer_hidden = self.scorer(params).weights_for(g)
        w_dir = w[st.edge_index]
        cache = {"w": w, "scorer_hidden": scorer_hidden, "layers": [], "structure": st}
        h = np.asarray(g.node_features, dtype=np.float64)
        for layer in range(N_LAYERS):
            prefix = f"sage_{layer}"
            agg, agg_cache = self._aggregate(params, prefix, h, w_dir, st, n)
            z = agg @ params[f"{prefix}.neighbor_weights"].T + params[f"{prefix}.bias"]
            if self.hp.aggregation != "gcn":
                z = z + h @ params[f"{prefix}.self_weights"].T
            a = activate(self.hp.activation, z)
            mask = dropout_mask(a.shape, self.hp.dropout, rng, training)
            cache["layers"].append({"h": h, "agg": agg, "agg_cache": agg_cache, "z": z, "a": a, "mask": mask})
            h = a * mask
        pred = (h @ params["head.weights"].T + params["head.bias"])[:, 0]
        cache["embeddings"] = h
        return pred, h, cache

    def backward(self, cache, dpred, params=None):
        params = self.params if params is None else params
        st = cache["structure"]
        w = cache["w"]
        w_dir = w[st.edge_index]
        grads = {}
        emb = cache["embeddings"]
        dout = dpred[:, None]
        grads["head.weights"] = dout.T @ emb
        grads["head.bias"] = dout.sum(axis=0)
        d_h = dout @ params["head.weights"]
        d_w_dir = np.zeros(len(st.src))
        for layer in reversed(range(N_LAYERS)):
            prefix = f"sage_{layer}"
            lc = cache["layers"][layer]
            dz = d_h * lc["mask"] * activation_grad(self.hp.activation, lc["z"], lc["a"])
            grads[f"{prefix}.bias"] = dz.sum(axis=0)
            grads[f"{prefix}.neighbor_weights"] = dz.T @ lc["agg"]
            d_agg = dz @ params[f"{prefix}.neighbor_weights"]
            d_h_in, d_w_layer = self._aggregate_backward(
                params, prefix, lc["h"], w_dir, st, lc["agg"], lc["agg_cache"], d_agg, grads
            )
            if self.hp.aggregation != "gcn":
                grads[f"{prefix}.self_weights"] = dz.T @ lc["h"]
                d_h_in = d_h_in + dz @ params[f"{prefix}.self_weights"]
            d_w_dir += d_w_layer
            d_h = d_h_in
        # w = exp(raw) * w0, so dL/draw = dL/dw * w
        d_raw = np.bincount(st.edge_index, weights=d_w_dir, minlength=len(w)) * w
        grads["scorer.weights"] = (d_raw @ cache["scorer_hidden"])[None, :] if len(w) else np.zeros_like(params["scorer.weights"])
        grads["scorer.bias"] = np.array([d_raw.sum()])
        return dict(sorted(grads.items()))

    def objective(self, g, train_idx, rng):
        st = _Structure.of(g)
        targets = g.node_targets

        def loss_and_grads(params):
            pred, _, cache = self.forward(g, training=True, rng=rng, params=params, structure=st)
            loss, dpred = masked_loss(pred, targets, train_idx)
            return loss, self.backward(cache, dpred, params=params)
        return loss_and_grads


def edge_weights(m, g):
    """Refined, strictly positive weight of every canonical edge of g."""
    return m.scorer().weights_for(g)[0]


def model_forward(m, g, training=False, seed=None):
    """
    Returns:
        tuple: (predictions of length n, embeddings n x hidden_dim)
    """
    pred, emb, _ = m.forward(g, training=training, rng=seed)
    return pred, emb


def _train_indices(train_mask, n):
    train_mask = np.asarray(train_mask)
    if train_mask.dtype == bool:
        if train_mask.shape != (n,):
            raise NeuralError(f"train mask has shape {train_mask.shape}, graph has {n} nodes")
        train_mask = np.flatnonzero(train_mask)
    if len(train_mask) == 0:
        raise EmptyMask("training mask selects no nodes")
    return train_mask


def train_transductive(m, g, train_mask, hp=None, rng=None):
    """
    Full-graph training with the loss restricted to train nodes.

    Test-node targets never enter the loss; the graph itself was built from
    features only.

    Args:
        m (GnnModel): Model, trained in place
        g (PingGraph): Graph over all samples
        train_mask (np.ndarray): Boolean node mask, or train node indices
        hp (Hyperparameters): Defaults to the model's own
        rng (np.random.Generator): Dropout stream

    Returns:
        tuple: (m, loss history)
    """
    hp = hp or m.hp
    train_idx = _train_indices(train_mask, g.n_nodes)
    if rng is None:
        rng = training_rngs(hp.seed)[1]
    history = train_loop(m.params, m.objective(g, train_idx, rng), hp, frozen=m.frozen, name="gnn")
    return m, history


def train_batched(m, batch, train_mask, hp=None, rng=None):
    """
    Mini-batch-by-graph training over a GraphBatch.

    Each epoch visits the graphs in order and takes one optimizer step per
    graph on that graph's mean train-node loss. The recorded epoch loss is the
    squared error summed over all train nodes divided by their count. Graphs
    without train nodes are skipped.

    Args:
        train_mask (np.ndarray): Boolean mask over dataset rows, or row indices
    """
    hp = hp or m.hp
    train_idx = _train_indices(train_mask, batch.n_samples)
    is_train = np.zeros(batch.n_samples, dtype=bool)
    is_train[train_idx] = True
    if rng is None:
        rng = training_rngs(hp.seed)[1]

    jobs = []
    for g in batch.graphs:
        local = np.flatnonzero(is_train[g.node_global_ids])
        if len(local):
            jobs.append((len(local), m.objective(g, local, rng)))
    total = sum(count for count, _ in jobs)

    state = OptimizerState.create(hp.optimizer, m.params)
    history = []
    for epoch in range(hp.epochs):
        squared_error = 0.0
        for count, objective in jobs:
            loss, grads = objective(m.params)
            for key in m.frozen:
                grads.pop(key, None)
            optimizer_step(state, m.params, grads, hp.learning_rate, hp.l2_weight)
            squared_error += loss * count
        history.append(squared_error / total)
        if epoch % 50 == 0:
            logger.debug(f"gnn (batched) epoch {epoch}: train loss {history[-1]:.6f}")
    return m, history


def extract_embeddings(m, g):
    """
    Evaluation-mode embeddings aligned to dataset row order.

    Args:
        g (PingGraph | GraphBatch): Graph over every sample, or a batch covering them

    Returns:
        np.ndarray: S x hidden_dim matrix, row i for the sample with global id i
    """
    graphs = g.graphs if isinstance(g, GraphBatch) else (g,)
    n_samples = g.n_samples if isinstance(g, GraphBatch) else int(g.node_global_ids.max()) + 1
    out = np.zeros((n_samples, m.hp.hidden_dim))
    for member in graphs:
        out[member.node_global_ids] = m.forward(member)[1]
    return out


def predict(m, g):
    """Evaluation-mode predictions aligned to dataset row order."""
    graphs = g.graphs if isinstance(g, GraphBatch) else (g,)
    n_samples = g.n_samples if isinstance(g, GraphBatch) else int(g.node_global_ids.max()) + 1
    out = np.zeros(n_samples)
    for member in graphs:
        out[member.node_global_ids] = m.forward(member)[0]
    return out


def save_gnn(path, m):
    save_checkpoint(
        path,
        "gnn",
        m.params,
        m.hp,
        extra={"aggregation": m.hp.aggregation, "scorer_activation": m.hp.scorer_activation, "n_features": m.n_features},
    )


def load_gnn(path):
    doc = load_checkpoint(path)
    if doc["kind"] != "gnn":
        raise NeuralError(f"{path} holds a {doc['kind']!r} checkpoint, not a GNN")
    return GnnModel(doc["params"], Hyperparameters(**doc["hp"]), doc["n_features"])


def describe_model(m):
    """Parameter count per block, for logs."""
    blocks = {}
    for name, p in m.params.items():
        block = name.split(".")[0]
        blocks[block] = blocks.get(block, 0) + p.size
    return {"hp": asdict(m.hp), "parameters": blocks}
