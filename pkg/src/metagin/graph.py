"""Attributed graphs and SGC-style feature propagation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import GraphError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class ClassSplits:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def __getitem__(self, name: str) -> tuple[int, ...]:
        if name == "validation":
            name = "val"
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def all_classes(self) -> set[int]:
        return set(self.train) | set(self.val) | set(self.test)


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected graph with dense features, integer labels and class splits.

    ``adjacency`` is a symmetric 0/1 CSR matrix with an empty diagonal.
    Arrays are marked read-only so instances can be shared freely.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    splits: ClassSplits
    stripped_self_loops: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def edge_list(self) -> list[tuple[int, int]]:
        upper = sp.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(upper.row.tolist(), upper.col.tolist()))

    def nodes_of_split(self, split: str) -> np.ndarray:
        classes = np.asarray(self.splits[split], dtype=np.int64)
        return np.flatnonzero(np.isin(self.labels, classes))

    def propagated(self, k: int = 2) -> "PropagatedFeatures":
        """Cached ``S^k X`` for this graph."""
        if k not in self._cache:
            self._cache[k] = propagate(self.features, normalize_adjacency(self), k)
        return self._cache[k]


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    matrix: sp.csr_matrix


@dataclass(frozen=True, eq=False)
class PropagatedFeatures:
    matrix: np.ndarray
    hop_count: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def build_graph(
    edges: Iterable[tuple[int, int]],
    features,
    labels,
    splits: ClassSplits | dict | Sequence[Iterable[int]],
) -> AttributedGraph:
    """Validate raw inputs and assemble an :class:`AttributedGraph`.

    Duplicate and reversed edges collapse to one undirected edge. Self-loops
    are stripped; their count is kept on ``graph.stripped_self_loops``.
    """
    features = np.array(features, dtype=np.float64, copy=True)
    if features.ndim != 2:
        raise GraphError(f"features must be 2-D, got shape {features.shape}")
    labels = np.array(labels, dtype=np.int64, copy=True).reshape(-1)
    n = features.shape[0]
    if labels.shape[0] != n:
        raise GraphError(f"{labels.shape[0]} labels for {n} feature rows")
    if not np.all(np.isfinite(features)):
        raise GraphError("features contain non-finite values")

    splits = _coerce_splits(splits)
    _check_splits(splits, labels)

    edge_arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if edge_arr.size and (edge_arr.min() < 0 or edge_arr.max() >= n):
        bad = edge_arr[(edge_arr < 0).any(axis=1) | (edge_arr >= n).any(axis=1)][0]
        raise GraphError(f"edge ({bad[0]}, {bad[1]}) references a node outside [0, {n})")
    loops = edge_arr[:, 0] == edge_arr[:, 1]
    n_loops = int(loops.sum())
    if n_loops:
        logger.warning("stripped %d self-loop(s)", n_loops)
        edge_arr = edge_arr[~loops]

    rows = np.concatenate([edge_arr[:, 0], edge_arr[:, 1]])
    cols = np.concatenate([edge_arr[:, 1], edge_arr[:, 0]])
    adj = sp.csr_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    adj.sort_indices()

    return AttributedGraph(
        adjacency=adj,
        features=_frozen(features),
        labels=_frozen(labels),
        splits=splits,
        stripped_self_loops=n_loops,
    )


def _coerce_splits(splits) -> ClassSplits:
    if isinstance(splits, ClassSplits):
        return splits
    if isinstance(splits, dict):
        parts = [
            splits.get(key, splits.get(alt, ()))
            for key, alt in (("train_classes", "train"), ("val_classes", "val"), ("test_classes", "test"))
        ]
    else:
        parts = list(splits)
        if len(parts) != 3:
            raise GraphError("expected three class splits (train, val, test)")
    return ClassSplits(*(tuple(sorted(int(c) for c in part)) for part in parts))


def _check_splits(splits: ClassSplits, labels: np.ndarray) -> None:
    sets = [set(splits.train), set(splits.val), set(splits.test)]
    for name, s in zip(SPLIT_NAMES, sets):
        if len(s) != len(splits[name]):
            raise GraphError(f"duplicate class id in {name} split")
    for i in range(3):
        for j in range(i + 1, 3):
            overlap = sets[i] & sets[j]
            if overlap:
                raise GraphError(
                    f"{SPLIT_NAMES[i]} and {SPLIT_NAMES[j]} splits overlap on classes {sorted(overlap)}"
                )
    present = set(np.unique(labels).tolist())
    covered = splits.all_classes()
    if present - covered:
        raise GraphError(f"label ids {sorted(present - covered)} are not in any split")
    if covered - present:
        raise GraphError(f"split classes {sorted(covered - present)} have no nodes")


def normalize_adjacency(graph: AttributedGraph) -> NormalizedAdjacency:
    """Symmetric normalization with self-loops: ``D^-1/2 (A + I) D^-1/2``."""
    n = graph.num_nodes
    a_hat = graph.adjacency + sp.identity(n, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    s = (d_inv_sqrt @ a_hat @ d_inv_sqrt).tocsr()
    s.sort_indices()
    return NormalizedAdjacency(matrix=s)


def propagate(features, s: NormalizedAdjacency | sp.spmatrix, k: int) -> PropagatedFeatures:
    """Return ``S^k X`` computed with ``k`` sparse-dense products."""
    mat = s.matrix if isinstance(s, NormalizedAdjacency) else s
    x = np.asarray(features, dtype=np.float64)
    if k < 0:
        raise ValueError(f"hop count must be non-negative, got {k}")
    if mat.shape[1] != x.shape[0]:
        raise GraphError(f"adjacency has {mat.shape[1]} columns but features have {x.shape[0]} rows")
    out = np.array(x, copy=True)
    for _ in range(k):
        out = np.asarray(mat @ out)
    return PropagatedFeatures(matrix=_frozen(out), hop_count=k)
