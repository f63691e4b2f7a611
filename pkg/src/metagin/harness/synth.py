"""Stochastic block model benchmark graphs with Gaussian class features."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..graph import ClassSplits
from .bundle import DatasetBundle

_EDGE_STREAM = 1
_MEAN_STREAM = 2
_FEATURE_STREAM = 3


def class_means(num_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Class centres at pairwise distance ``separation``.

    Directions are orthonormal when ``num_classes <= dim`` and random unit
    vectors (nearly orthogonal) otherwise.
    """
    if num_classes <= dim:
        q, r = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        dirs = (q * np.sign(np.diag(r))).T
    else:
        dirs = rng.standard_normal((num_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * (separation / np.sqrt(2.0))


def generate_sbm(
    num_classes: int,
    nodes_per_class: int,
    p_in: float,
    p_out: float,
    dim: int,
    mean_separation: float,
    feature_std: float,
    split_counts: Sequence[int],
    seed: int,
    name: str = "sbm",
) -> DatasetBundle:
    """Seeded SBM graph; node i belongs to class ``i // nodes_per_class``.

    Classes ``0..a-1`` form the train split, the next ``b`` the validation
    split and the rest the test split, for ``split_counts = (a, b, c)``.
    """
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ValueError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if len(split_counts) != 3 or sum(split_counts) != num_classes or min(split_counts) < 0:
        raise ValueError(f"split counts {list(split_counts)} must be three non-negative ints summing to {num_classes}")
    if num_classes < 1 or nodes_per_class < 1 or dim < 1:
        raise ValueError("num_classes, nodes_per_class and dim must be >= 1")
    if feature_std < 0:
        raise ValueError("feature_std must be non-negative")

    n = num_classes * nodes_per_class
    labels = np.repeat(np.arange(num_classes), nodes_per_class)

    edge_rng = np.random.default_rng([int(seed), _EDGE_STREAM])
    src, dst = np.triu_indices(n, k=1)
    prob = np.where(labels[src] == labels[dst], p_in, p_out)
    keep = edge_rng.random(src.size) < prob
    edges = np.stack([src[keep], dst[keep]], axis=1)

    means = class_means(num_classes, dim, mean_separation, np.random.default_rng([int(seed), _MEAN_STREAM]))
    noise = np.random.default_rng([int(seed), _FEATURE_STREAM]).standard_normal((n, dim))
    features = means[labels] + feature_std * noise

    a, b, _ = split_counts
    classes = list(range(num_classes))
    splits = ClassSplits(tuple(classes[:a]), tuple(classes[a : a + b]), tuple(classes[a + b :]))
    extra = {
        "generator": {
            "num_classes": num_classes,
            "nodes_per_class": nodes_per_class,
            "p_in": p_in,
            "p_out": p_out,
            "dim": dim,
            "mean_separation": mean_separation,
            "feature_std": feature_std,
            "split_counts": list(split_counts),
            "seed": int(seed),
        }
    }
    return DatasetBundle(edges=edges, features=features, labels=labels, splits=splits, name=name, extra=extra)
