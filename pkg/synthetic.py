"""
Synthetic performance datasets for checks and demos.
"""
import logging

import numpy as np
import pandas as pd
from sklearn.datasets import make_blobs

from dataset import TabularDataset

logger = logging.getLogger(__name__)

TARGET_NAME = "runtime"


def make_neighborhood_dataset(n_samples=800, n_features=8, n_prototypes=16, noise=0.05, jitter=0.15, seed=0):
    """
    Samples that share a planted latent with their cosine neighbourhood.

    Each prototype is a random direction carrying a latent value. A sample is
    a noisy positive multiple of one prototype, and its target is a smooth
    function of that prototype's latent plus Gaussian noise whose scale is
    `noise` times the clean target's standard deviation.

    Returns:
        tuple: (TabularDataset, prototype index per sample)
    """
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_prototypes, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    latent = rng.uniform(-1.0, 1.0, size=n_prototypes)

    owner = rng.integers(0, n_prototypes, size=n_samples)
    scale = rng.uniform(0.8, 1.25, size=(n_samples, 1))
    features = scale * (directions[owner] + jitter * rng.normal(size=(n_samples, n_features)) / np.sqrt(n_features))

    clean = np.sin(2.0 * latent[owner]) + 0.5 * latent[owner] ** 2
    target = clean + noise * np.std(clean) * rng.normal(size=n_samples)
    logger.debug(f"Neighbourhood dataset: {n_samples} samples, {n_prototypes} prototypes")
    return TabularDataset.from_arrays(features, target), owner


def make_blob_dataset(n_per_blob=40, n_blobs=3, n_features=2, cluster_std=1.0, separation=20.0, seed=0):
    """
    Well-separated Gaussian blobs and their ground-truth labels.

    Centres sit `separation` apart along the coordinate axes, so with the
    default std they are many standard deviations from each other.
    """
    centers = np.zeros((n_blobs, n_features))
    for b in range(1, n_blobs):
        centers[b, (b - 1) % n_features] = separation * ((b - 1) // n_features + 1)
    features, labels = make_blobs(
        n_samples=[n_per_blob] * n_blobs,
        n_features=n_features,
        centers=centers,
        cluster_std=cluster_std,
        random_state=seed,
    )
    return features, labels


def make_linear_dataset(n_samples=120, n_features=4, seed=0, constant=None):
    """Target exactly linear in the features (or a constant when given)."""
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n_samples, n_features))
    if constant is not None:
        target = np.full(n_samples, float(constant))
    else:
        target = features @ rng.normal(size=n_features) + 0.5
    return TabularDataset.from_arrays(features, target)


def to_frame(d, target_name=TARGET_NAME):
    frame = pd.DataFrame(d.features, columns=list(d.feature_names))
    frame[target_name] = d.target
    return frame


def write_csv(d, path, target_name=TARGET_NAME):
    """Write a dataset as a CSV that load_csv reads back; missing cells stay empty."""
    to_frame(d, target_name).to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {d.n_samples} samples to {path}")
