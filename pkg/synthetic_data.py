"""Synthetic two-class datasets and their split across federation clients.

The default split is 800 negative and 800 positive training rows with 200
of each for testing. The data are isotropic unit-variance Gaussian blobs
whose means sit `separation` apart, so the Bayes accuracy is
Phi(separation / 2) (about 0.84 at the default separation of 2).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.datasets import make_blobs

from errors import DomainError, ShapeError
from model import Dataset
from ring import derive_seed
from utils import read_csv


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    train_per_class: int = 800
    test_per_class: int = 200
    feature_dim: int = 8
    separation: float = 2.0

    def __post_init__(self):
        if min(self.train_per_class, self.test_per_class, self.feature_dim) < 1:
            raise DomainError("dataset sizes and feature_dim must be positive")
        if self.separation < 0:
            raise DomainError(f"separation must be non-negative, got {self.separation}")


def _blobs(per_class: int, spec: SyntheticDatasetSpec, seed: int) -> Dataset:
    direction = np.ones(spec.feature_dim) / np.sqrt(spec.feature_dim)
    centers = np.stack([np.zeros(spec.feature_dim), spec.separation * direction])
    features, labels = make_blobs(
        n_samples=[per_class, per_class],
        n_features=spec.feature_dim,
        centers=centers,
        cluster_std=1.0,
        shuffle=True,
        random_state=seed % (2**32),
    )
    return Dataset(features, labels)


def generate_dataset(spec: SyntheticDatasetSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Class-balanced (train, test) pair, deterministic per seed."""
    train = _blobs(spec.train_per_class, spec, derive_seed(seed, "train"))
    test = _blobs(spec.test_per_class, spec, derive_seed(seed, "test"))
    return train, test


def partition(data: Dataset, c: int, seed: int) -> list[Dataset]:
    """Shuffle, then cut into c contiguous shares whose sizes differ by at most one."""
    if c < 1 or c > len(data):
        raise DomainError(f"cannot split {len(data)} rows across {c} clients")
    order = np.random.default_rng(derive_seed(seed, "partition") % (2**63)).permutation(len(data))
    return [data.subset(share) for share in np.array_split(order, c)]


def partition_by_fractions(data: Dataset, fractions: list[float], seed: int) -> list[Dataset]:
    """Shuffle, then cut into shares proportional to *fractions*."""
    if not fractions or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-6:
        raise DomainError(f"partition fractions must be positive and sum to 1, got {fractions}")
    total = len(data)
    raw = [f * total for f in fractions]
    sizes = [int(np.floor(x)) for x in raw]
    # hand leftover rows to the largest remainders, lowest client id first on ties
    by_remainder = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in by_remainder[:total - sum(sizes)]:
        sizes[i] += 1
    if min(sizes) < 1:
        raise DomainError(f"partition {fractions} leaves a client without rows")

    order = np.random.default_rng(derive_seed(seed, "partition") % (2**63)).permutation(total)
    bounds = np.cumsum([0] + sizes)
    return [data.subset(order[bounds[i]:bounds[i + 1]]) for i in range(len(sizes))]


def save_dataset(data: Dataset, path: str):
    """CSV with feature columns x0..x{d-1} followed by ``label``."""
    frame = pd.DataFrame(data.features, columns=[f"x{i}" for i in range(data.features.shape[1])])
    frame["label"] = data.labels
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")


def load_dataset(path: str) -> Dataset:
    frame = read_csv(path)
    if "label" not in frame.columns:
        raise ShapeError(f"{path} has no 'label' column")
    return Dataset(frame.drop(columns=["label"]).to_numpy(dtype=np.float64), frame["label"].to_numpy())
