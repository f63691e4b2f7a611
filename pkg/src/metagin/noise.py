"""Label corruption: transition matrices and seeded noise injection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

NOISE_STREAM = 0x6E6F697365  # "noise"

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"
_KIND_ALIASES = {"sym": SYMMETRIC, "symmetric": SYMMETRIC, "asym": ASYMMETRIC, "asymmetric": ASYMMETRIC}


def canonical_kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown noise kind {kind!r}") from None


@dataclass(frozen=True, eq=False)
class CorruptionMatrix:
    """Row-stochastic ``P x P`` matrix; entry (i, j) is the chance that class i becomes j."""

    entries: np.ndarray
    kind: str
    epsilon: float

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class NoisyLabeling:
    corrupted_labels: np.ndarray
    flip_mask: np.ndarray
    seed: int


def build_corruption_matrix(kind: str, num_classes: int, epsilon: float) -> CorruptionMatrix:
    """Symmetric: off-diagonals ``eps / (P - 1)``.
    Asymmetric: class i flips to ``(i + 1) mod P`` with probability ``eps``.
    """
    kind = canonical_kind(kind)
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    p = num_classes
    if kind == SYMMETRIC:
        t = np.full((p, p), epsilon / (p - 1))
    else:
        t = np.zeros((p, p))
        t[np.arange(p), (np.arange(p) + 1) % p] = epsilon
    np.fill_diagonal(t, 1.0 - epsilon)
    t.setflags(write=False)
    return CorruptionMatrix(entries=t, kind=kind, epsilon=float(epsilon))


def apply_noise(
    labels,
    split_classes: Sequence[int],
    matrix: CorruptionMatrix,
    seed: int,
) -> NoisyLabeling:
    """Resample every label from the matrix row of its true class.

    Labels must all belong to ``split_classes``; corrupted labels stay inside
    that class list. Draws come from a stream dedicated to noise injection,
    so the result depends only on (labels, matrix, seed).
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.asarray(list(split_classes), dtype=np.int64)
    if classes.size != matrix.num_classes:
        raise ValueError(f"matrix is {matrix.num_classes}x{matrix.num_classes} but split has {classes.size} classes")
    pos = _positions(labels, classes)

    rng = np.random.default_rng([int(seed), NOISE_STREAM])
    cdf = np.cumsum(matrix.entries, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(labels.shape[0])
    # searchsorted on each node's own row of the cumulative matrix
    new_pos = (u[:, None] >= cdf[pos]).sum(axis=1)
    new_pos = np.minimum(new_pos, classes.size - 1)
    corrupted = classes[new_pos]
    return NoisyLabeling(corrupted_labels=corrupted, flip_mask=corrupted != labels, seed=int(seed))


def _positions(labels: np.ndarray, classes: np.ndarray) -> np.ndarray:
    lookup = {int(c): i for i, c in enumerate(classes)}
    try:
        return np.fromiter((lookup[int(y)] for y in labels), dtype=np.int64, count=labels.size)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} is not in the split class list {classes.tolist()}") from None


@dataclass(frozen=True, eq=False)
class FlipRates:
    matrix: np.ndarray
    empty_rows: tuple[int, ...]


def empirical_flip_rates(original, corrupted, split_classes: Sequence[int]) -> FlipRates:
    """Row r, column c: fraction of nodes of true class r labelled c.

    Classes without nodes give an all-zero row, listed in ``empty_rows``.
    """
    original = np.asarray(original, dtype=np.int64)
    corrupted = np.asarray(corrupted, dtype=np.int64)
    if original.shape != corrupted.shape:
        raise ValueError("original and corrupted label vectors differ in length")
    classes = np.asarray(list(split_classes), dtype=np.int64)
    p = classes.size
    counts = np.zeros((p, p))
    np.add.at(counts, (_positions(original, classes), _positions(corrupted, classes)), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    rates = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    empty = tuple(int(i) for i in np.flatnonzero(totals.ravel() == 0))
    return FlipRates(matrix=rates, empty_rows=empty)


def corrupt_graph_labels(graph, kind: str, epsilon: float, seed: int) -> tuple[np.ndarray, dict[str, NoisyLabeling]]:
    """Weak labels for a whole graph: train and validation splits are corrupted
    independently within their own class lists; test labels stay clean.
    """
    weak = np.array(graph.labels, copy=True)
    results = {}
    for offset, split in enumerate(("train", "val")):
        classes = graph.splits[split]
        nodes = graph.nodes_of_split(split)
        if len(classes) < 2 or nodes.size == 0:
            continue
        matrix = build_corruption_matrix(kind, len(classes), epsilon)
        noisy = apply_noise(graph.labels[nodes], classes, matrix, seed=_split_seed(seed, offset))
        weak[nodes] = noisy.corrupted_labels
        results[split] = noisy
    weak.setflags(write=False)
    return weak, results


def _split_seed(seed: int, offset: int) -> int:
    return int(np.random.SeedSequence([int(seed), offset]).generate_state(1)[0])
