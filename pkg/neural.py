"""
From-scratch neural network primitives and the DNN baseline.

Parameters live in plain dicts (name -> float64 ndarray) so that the
optimizers, the gradient checker and the checkpoint writer work the same
way for the DNN here and the graph model in gnn.py. Every gradient is
derived by hand.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed

from config import STAGE_MODEL, Hyperparameters, PingError, __version__, derive_seed
from evaluation import EvalReport, embed_and_regress

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_VERSION = 1

# Streams derived from a training seed
INIT_STREAM = 0
DROPOUT_STREAM = 1


class NeuralError(PingError, ValueError):
    pass


class ShapeMismatch(NeuralError):
    pass


class LengthMismatch(NeuralError):
    pass


class EmptyVector(NeuralError):
    pass


class EmptyMask(NeuralError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(f"weights {self.weights.shape} do not match bias {self.bias.shape}")


def dense_forward(layer, x):
    """W x + b for a vector, or row-wise for an n x in matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.weights.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[-1]} features, layer expects {layer.weights.shape[1]}")
    return x @ layer.weights.T + layer.bias


def activate(kind, x):
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if kind == "elu":
        return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    if kind == "tanh":
        return np.tanh(x)
    raise NeuralError(f"unknown activation {kind!r}")


def activation_grad(kind, x, y):
    """Derivative of activate(kind, .) at pre-activation x, given y = activate(kind, x)."""
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(x > 0, 1.0, LEAKY_SLOPE)
    if kind == "elu":
        return np.where(x > 0, 1.0, y + ELU_ALPHA)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    raise NeuralError(f"unknown activation {kind!r}")


def as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def dropout_mask(shape, rate, seed, training=True):
    """
    Inverted dropout mask: kept units are scaled by 1 / (1 - rate).

    Args:
        shape (tuple): Mask shape
        rate (float): Drop probability in [0, 1)
        seed (int | np.random.Generator): Seed or a generator to draw from
        training (bool): Evaluation mode returns all ones and draws nothing

    Returns:
        np.ndarray: Multiplicative mask
    """
    if not training or rate == 0:
        return np.ones(shape)
    keep = as_rng(seed).random(shape) >= rate
    return keep / (1.0 - rate)


def mse_loss(pred, truth):
    """
    Mean squared error and its gradient with respect to pred.

    Returns:
        tuple: (loss, gradient)
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"pred has shape {pred.shape}, truth has {truth.shape}")
    if pred.size == 0:
        raise EmptyVector("mse_loss needs at least one value")
    diff = pred - truth
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class OptimizerState:
    kind: str
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def create(cls, kind, params):
        state = cls(kind=kind)
        if kind == "adam":
            state.first_moment = {name: np.zeros_like(p) for name, p in params.items()}
            state.second_moment = {name: np.zeros_like(p) for name, p in params.items()}
        return state


def optimizer_step(state, params, grads, lr, l2_weight=0.0):
    """
    Update params in place from grads (parameters absent from grads stay put).

    Adam uses bias-corrected moments; SGD is p -= lr * g. A non-zero
    l2_weight adds l2_weight * p to each gradient first.
    """
    for name, g in grads.items():
        if name not in params or params[name].shape != g.shape:
            raise ShapeMismatch(f"gradient {name!r} does not match any parameter")
    state.step += 1
    for name in sorted(grads):
        p = params[name]
        g = grads[name] + l2_weight * p if l2_weight else grads[name]
        if state.kind == "sgd":
            p -= lr * g
            continue
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** state.step)
        v_hat = v / (1.0 - state.beta2 ** state.step)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def train_loop(params, objective, hp, frozen=(), log_every=50, name="model"):
    """
    Full-batch training for hp.epochs optimizer steps.

    Args:
        params (dict): Parameters, updated in place
        objective (callable): params -> (loss, grads); draws its own dropout
        hp (Hyperparameters): Optimizer, learning rate, L2 weight and epochs
        frozen (tuple): Parameter names that are never updated

    Returns:
        list: Training loss of each epoch, measured before that epoch's step
    """
    state = OptimizerState.create(hp.optimizer, params)
    history = []
    for epoch in range(hp.epochs):
        loss, grads = objective(params)
        for key in frozen:
            grads.pop(key, None)
        optimizer_step(state, params, grads, hp.learning_rate, hp.l2_weight)
        history.append(loss)
        if log_every and epoch % log_every == 0:
            logger.debug(f"{name} epoch {epoch}: train loss {loss:.6f}")
    return history


def masked_loss(pred, targets, train_idx):
    """MSE over train_idx rows; the gradient is zero on every other row."""
    if len(train_idx) == 0:
        raise EmptyMask("training mask selects no rows")
    loss, g = mse_loss(pred[train_idx], targets[train_idx])
    dpred = np.zeros_like(pred)
    dpred[train_idx] = g
    return loss, dpred


class DnnModel:
    """Two hidden dense layers and a linear head: F -> hidden -> hidden -> 1."""

    LAYERS = ("hidden_0", "hidden_1", "head")

    def __init__(self, params, hp):
        self.params = params
        self.hp = hp

    @classmethod
    def init(cls, n_features, hp, seed):
        rng = as_rng(seed)
        dims = [n_features, hp.hidden_dim, hp.hidden_dim, 1]
        params = {}
        for layer, fan_in, fan_out in zip(cls.LAYERS, dims[:-1], dims[1:]):
            params[f"{layer}.weights"] = glorot_uniform(rng, fan_out, fan_in)
            params[f"{layer}.bias"] = np.zeros(fan_out)
        return cls(dict(sorted(params.items())), hp)

    def forward(self, x, training=False, rng=None, params=None):
        """
        Returns:
            tuple: (predictions, embeddings, cache) with embeddings the second hidden layer output
        """
        params = self.params if params is None else params
        h = np.asarray(x, dtype=np.float64)
        cache = {"inputs": [], "pre": [], "post": [], "masks": []}
        for layer in self.LAYERS[:2]:
            cache["inputs"].append(h)
            z = h @ params[f"{layer}.weights"].T + params[f"{layer}.bias"]
            a = activate(self.hp.activation, z)
            mask = dropout_mask(a.shape, self.hp.dropout, rng, training)
            cache["pre"].append(z)
            cache["post"].append(a)
            cache["masks"].append(mask)
            h = a * mask
        pred = (h @ params["head.weights"].T + params["head.bias"])[:, 0]
        cache["embeddings"] = h
        return pred, h, cache

    def backward(self, cache, dpred, params=None):
        params = self.params if params is None else params
        grads = {}
        h = cache["embeddings"]
        dout = dpred[:, None]
        grads["head.weights"] = dout.T @ h
        grads["head.bias"] = dout.sum(axis=0)
        dh = dout @ params["head.weights"]
        for i in (1, 0):
            layer = self.LAYERS[i]
            dz = dh * cache["masks"][i] * activation_grad(self.hp.activation, cache["pre"][i], cache["post"][i])
            grads[f"{layer}.weights"] = dz.T @ cache["inputs"][i]
            grads[f"{layer}.bias"] = dz.sum(axis=0)
            dh = dz @ params[f"{layer}.weights"]
        return dict(sorted(grads.items()))

    def predict(self, x):
        return self.forward(x)[0]

    def embed(self, x):
        return self.forward(x)[1]

    def objective(self, x, targets, train_idx, rng):
        def loss_and_grads(params):
            pred, _, cache = self.forward(x, training=True, rng=rng, params=params)
            loss, dpred = masked_loss(pred, targets, train_idx)
            return loss, self.backward(cache, dpred, params=params)
        return loss_and_grads


def training_rngs(seed):
    """(init generator, dropout generator) derived from one training seed."""
    return (
        np.random.default_rng(derive_seed(seed, INIT_STREAM)),
        np.random.default_rng(derive_seed(seed, DROPOUT_STREAM)),
    )


def train_dnn(features, targets, train_idx, hp, seed):
    """
    Train a DnnModel full-batch on all rows with the loss restricted to train_idx.

    Returns:
        tuple: (DnnModel, loss history)
    """
    init_rng, dropout_rng = training_rngs(seed)
    model = DnnModel.init(features.shape[1], hp, init_rng)
    objective = model.objective(features, targets, np.asarray(train_idx), dropout_rng)
    history = train_loop(model.params, objective, hp, name="dnn")
    return model, history


def _dnn_fold(features, targets, train_idx, test_idx, hp, seed):
    start = time.perf_counter()
    model, history = train_dnn(features, targets, train_idx, hp, seed)
    seconds = time.perf_counter() - start
    mse = embed_and_regress(model.embed(features), targets, train_idx, test_idx)
    return mse, seconds, history, model


def dnn_baseline_train(d, hp, folds, n_jobs=1, config_snapshot=None, keep_models=False):
    """
    DNN baseline under k-fold cross-validation.

    Each fold trains a fresh DnnModel on the fold's train rows, extracts the
    second hidden layer as embeddings and scores them with embed_and_regress.

    Args:
        d (TabularDataset): Preprocessed dataset
        hp (Hyperparameters): Model and optimizer settings; hp.seed seeds every fold
        folds (FoldPlan): Cross-validation plan

    Returns:
        EvalReport: Per-fold test MSE, loss curves and training time
    """
    if d.has_missing:
        raise NeuralError("dnn_baseline_train expects an imputed dataset")
    jobs = (
        delayed(_dnn_fold)(d.features, d.target, train_idx, test_idx, hp, derive_seed(hp.seed, STAGE_MODEL, i))
        for i, (train_idx, test_idx) in enumerate(folds.splits())
    )
    results = Parallel(n_jobs=n_jobs)(jobs)
    for i, (mse, _, _, _) in enumerate(results):
        logger.info(f"DNN fold {i}: test MSE {mse:.6f}")
    report = EvalReport.from_folds(
        method="dnn",
        per_fold_mse=[r[0] for r in results],
        train_seconds=sum(r[1] for r in results),
        loss_curves=[r[2] for r in results],
        config_snapshot=config_snapshot,
    )
    if keep_models:
        report.models = [r[3] for r in results]
    return report


def gradient_check(objective, params, h=1e-5):
    """
    Compare analytic gradients against central finite differences.

    Args:
        objective (callable): params -> (loss, grads)
        params (dict): Point to check at; restored before returning
        h (float): Finite-difference step

    Returns:
        float: max over entries of |a - f| / max(1, |a|, |f|)
    """
    _, grads = objective(params)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        analytic = grads.get(name, np.zeros_like(p))
        for idx in np.ndindex(p.shape):
            original = p[idx]
            p[idx] = original + h
            plus = objective(params)[0]
            p[idx] = original - h
            minus = objective(params)[0]
            p[idx] = original
            numeric = (plus - minus) / (2.0 * h)
            a = analytic[idx]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst


def params_to_doc(params):
    """Layer name -> shape -> values, in name order."""
    return {
        name: {"shape": list(params[name].shape), "values": params[name].ravel().tolist()}
        for name in sorted(params)
    }


def params_from_doc(doc):
    try:
        return {
            name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in sorted(doc.items())
        }
    except (KeyError, TypeError, ValueError) as e:
        raise NeuralError(f"malformed parameter block ({e})") from e


def save_checkpoint(path, kind, params, hp, extra=None):
    doc = {
        "version": CHECKPOINT_VERSION,
        "tool_version": __version__,
        "kind": kind,
        "hp": asdict(hp),
        "params": params_to_doc(params),
    }
    doc.update(extra or {})
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
    logger.info(f"Checkpoint ({kind}) written to {path}")


def load_checkpoint(path):
    """
    Returns:
        dict: The checkpoint document with "params" decoded into arrays
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise NeuralError(f"unsupported checkpoint version {doc.get('version')!r}")
    doc["params"] = params_from_doc(doc.get("params", {}))
    return doc


def save_dnn(path, model):
    save_checkpoint(path, "dnn", model.params, model.hp)


def load_dnn(path):
    doc = load_checkpoint(path)
    if doc["kind"] != "dnn":
        raise NeuralError(f"{path} holds a {doc['kind']!r} checkpoint, not a DNN")
    return DnnModel(doc["params"], Hyperparameters(**doc["hp"]))
