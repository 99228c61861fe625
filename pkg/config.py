"""
Configuration objects for the PING pipeline.

Every stage of the pipeline is driven by one of the frozen dataclasses below.
They validate their own ranges, serialize to flat dictionaries and can be
loaded from a JSON config file whose keys match the command-line flags.
"""
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

__version__ = "1.0.0"

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "elu", "leaky_relu")
SCORER_ACTIVATIONS = ("relu", "elu", "leaky_relu", "sigmoid", "tanh")
AGGREGATIONS = ("mean", "pool", "gcn")
OPTIMIZERS = ("adam", "sgd")
METHODS = ("ssgnn", "ssbgnn", "dnn")
CONSTRUCTION_METHODS = ("sgc", "bgc")

# Sub-seed stages; see derive_seed
STAGE_FOLDS = 0
STAGE_MISSING = 1
STAGE_MODEL = 2
STAGE_TUNE = 3


class PingError(Exception):
    """Base class for every error raised by the pipeline."""


class ConfigError(PingError, ValueError):
    """A configuration value is missing, unknown or out of range."""

    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _check_choice(name, value, choices):
    if value not in choices:
        raise ConfigError(name, f"must be one of {list(choices)}, got {value!r}")


def _check_range(name, value, low, high, high_inclusive=True):
    ok = low <= value <= high if high_inclusive else low <= value < high
    if not ok:
        bracket = "]" if high_inclusive else ")"
        raise ConfigError(name, f"must lie in [{low}, {high}{bracket}, got {value!r}")


@dataclass(frozen=True)
class MissingSpec:
    """Fraction of feature cells to blank out, and the seed choosing them."""
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        _check_range("missing_rate", self.rate, 0.0, 1.0)
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")


@dataclass(frozen=True)
class ConstructionConfig:
    n_neighbors: int = 5
    method: str = "sgc"
    bgc_min_cluster_size: int = 10

    def __post_init__(self):
        _check_choice("construction", self.method, CONSTRUCTION_METHODS)
        if self.n_neighbors < 1:
            raise ConfigError("neighbors", "must be at least 1")
        if self.bgc_min_cluster_size < 1:
            raise ConfigError("min_cluster_size", "must be positive")


@dataclass(frozen=True)
class ClusterConfig:
    min_cluster_size: int = 10
    # None means "same as min_cluster_size"
    min_samples: int = None

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ConfigError("min_cluster_size", "must be at least 2")
        if self.min_samples is not None and self.min_samples < 1:
            raise ConfigError("min_samples", "must be at least 1")

    @property
    def k(self):
        return self.min_cluster_size if self.min_samples is None else self.min_samples


@dataclass(frozen=True)
class Hyperparameters:
    hidden_dim: int = 64
    learning_rate: float = 1e-2
    dropout: float = 0.0
    optimizer: str = "adam"
    activation: str = "relu"
    aggregation: str = "mean"
    scorer_activation: str = "relu"
    l2_weight: float = 0.0
    epochs: int = 500
    seed: int = 0
    freeze_scorer: bool = False

    def __post_init__(self):
        _check_range("hidden_dim", self.hidden_dim, 25, 600)
        _check_range("learning_rate", self.learning_rate, 1e-5, 1e-1)
        _check_range("dropout", self.dropout, 0.0, 1.0, high_inclusive=False)
        _check_choice("optimizer", self.optimizer, OPTIMIZERS)
        _check_choice("activation", self.activation, ACTIVATIONS)
        _check_choice("aggregation", self.aggregation, AGGREGATIONS)
        _check_choice("scorer_activation", self.scorer_activation, SCORER_ACTIVATIONS)
        if self.l2_weight < 0:
            raise ConfigError("l2_weight", "must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "ssgnn"
    construction: ConstructionConfig = field(default_factory=ConstructionConfig)
    cluster_cfg: ClusterConfig = field(default_factory=ClusterConfig)
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    missing: MissingSpec = field(default_factory=MissingSpec)
    k_folds: int = 5
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        _check_choice("method", self.method, METHODS)
        if self.k_folds < 2:
            raise ConfigError("folds", "must be at least 2")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs", "must be non-zero")
        expected = {"ssgnn": "sgc", "ssbgnn": "bgc"}.get(self.method)
        if expected and self.construction.method != expected:
            raise ConfigError(
                "construction",
                f"method {self.method} needs {expected} construction, got {self.construction.method}",
            )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(
            method=data["method"],
            construction=ConstructionConfig(**data["construction"]),
            cluster_cfg=ClusterConfig(**data["cluster_cfg"]),
            hp=Hyperparameters(**data["hp"]),
            missing=MissingSpec(**data["missing"]),
            k_folds=data["k_folds"],
            seed=data["seed"],
            n_jobs=data.get("n_jobs", 1),
        )


# Flat key -> (section, attribute). These are also the config-file keys.
FLAT_KEYS = {
    "method": (None, "method"),
    "folds": (None, "k_folds"),
    "seed": (None, "seed"),
    "n_jobs": (None, "n_jobs"),
    "neighbors": ("construction", "n_neighbors"),
    "min_cluster_size": ("cluster_cfg", "min_cluster_size"),
    "min_samples": ("cluster_cfg", "min_samples"),
    "missing_rate": ("missing", "rate"),
    "hidden_dim": ("hp", "hidden_dim"),
    "learning_rate": ("hp", "learning_rate"),
    "dropout": ("hp", "dropout"),
    "optimizer": ("hp", "optimizer"),
    "activation": ("hp", "activation"),
    "aggregation": ("hp", "aggregation"),
    "scorer_activation": ("hp", "scorer_activation"),
    "l2_weight": ("hp", "l2_weight"),
    "epochs": ("hp", "epochs"),
}


def load_config_file(path):
    """
    Load a flat JSON config file.

    Args:
        path (str): Path to a JSON object mapping flat keys to values

    Returns:
        dict: The validated key/value pairs
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON in {path} (line {e.lineno}): {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must contain a JSON object")
    unknown = sorted(set(data) - set(FLAT_KEYS))
    if unknown:
        raise ConfigError("config", f"unknown keys in {path}: {unknown}")
    logger.info(f"Loaded {len(data)} config values from {path}")
    return data


def resolve_config(file_values=None, flag_values=None):
    """
    Build an ExperimentConfig from defaults, then config file, then flags.

    Args:
        file_values (dict): Flat values from load_config_file
        flag_values (dict): Flat values given explicitly on the command line

    Returns:
        ExperimentConfig: The resolved configuration
    """
    flat = {}
    flat.update(file_values or {})
    flat.update({k: v for k, v in (flag_values or {}).items() if v is not None})

    sections = {"construction": {}, "cluster_cfg": {}, "missing": {}, "hp": {}}
    top = {}
    for key, value in flat.items():
        if key not in FLAT_KEYS:
            raise ConfigError(key, "unknown configuration key")
        section, attr = FLAT_KEYS[key]
        (top if section is None else sections[section])[attr] = value

    seed = top.get("seed", 0)
    method = top.get("method", "ssgnn")
    sections["construction"].setdefault("method", "bgc" if method == "ssbgnn" else "sgc")
    sections["construction"]["bgc_min_cluster_size"] = sections["cluster_cfg"].get(
        "min_cluster_size", ClusterConfig.min_cluster_size
    )
    sections["hp"].setdefault("seed", seed)
    sections["missing"].setdefault("seed", derive_seed(seed, STAGE_MISSING))

    return ExperimentConfig(
        method=method,
        construction=ConstructionConfig(**sections["construction"]),
        cluster_cfg=ClusterConfig(**sections["cluster_cfg"]),
        hp=Hyperparameters(**sections["hp"]),
        missing=MissingSpec(**sections["missing"]),
        k_folds=top.get("k_folds", 5),
        seed=seed,
        n_jobs=top.get("n_jobs", 1),
    )


def flatten_config(cfg):
    """Inverse of resolve_config for the flat keys."""
    nested = cfg.to_dict()
    flat = {}
    for key, (section, attr) in FLAT_KEYS.items():
        flat[key] = nested[attr] if section is None else nested[section][attr]
    return flat


def derive_seed(seed, *stage):
    """
    Derive a sub-seed for one pipeline stage from the run seed.

    Args:
        seed (int): The single user-facing seed
        *stage (int): Spawn key, e.g. (STAGE_MODEL, fold_index)

    Returns:
        int: A 32-bit seed, identical across runs for the same inputs
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stage))
    return int(sequence.generate_state(1)[0])