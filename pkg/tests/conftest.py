import numpy as np
import pytest

from dataset import TabularDataset
from graph_core import PingGraph
from synthetic import make_linear_dataset, write_csv


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_dataset(rng):
    features = rng.normal(size=(30, 4))
    target = features.sum(axis=1) + 0.1 * rng.normal(size=30)
    return TabularDataset.from_arrays(features, target)


@pytest.fixture
def linear_dataset():
    return make_linear_dataset(n_samples=60, n_features=3, seed=7)


@pytest.fixture
def small_graph(rng):
    """Six nodes, three features, a few edges including an isolated node."""
    features = rng.normal(size=(6, 3))
    targets = rng.normal(size=6)
    pairs = [(0, 1), (1, 2), (2, 3), (0, 3), (3, 4), (1, 4)]
    return PingGraph.from_edges(features, targets, np.arange(6), pairs)


@pytest.fixture
def csv_path(tmp_path):
    def write(d, name="data.csv"):
        path = tmp_path / name
        write_csv(d, path)
        return str(path)
    return write
