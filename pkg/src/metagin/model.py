"""Graph interpolation network forward pass.

Nodes are embedded with a linear map on propagated features. Each
interpolation group of M same-label embeddings is collapsed into one
representation ``c``:

    p      = mean(z)                       prototype
    delta  = z - p
    h_j    = w . [z_j || delta_j]
    alpha  = softmax_j(leaky(a0 * h_i + a1 * h_j))
    s_i    = sigmoid(sum_j alpha_ij * h_j)
    c      = sum_i s_i z_i / sum_i s_i

and classified with ``softmax(W_c^T c + b_c)``. All functions accept an
optional leading group axis, i.e. ``(M, d')`` or ``(G, M, d')``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .episodes import InterpolatedEpisode
from .graph import PropagatedFeatures
from .numerics import ParamSet, as_tensor, cross_entropy, leaky_relu, sigmoid, softmax

VARIANTS = ("full", "mlp", "mean", "naive")
SCORE_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    d: int
    d_hidden: int = 16
    n_way: int = 2
    hops: int = 2
    leaky_slope: float = 0.2

    def __post_init__(self):
        if min(self.d, self.d_hidden, self.n_way) < 1:
            raise ValueError("d, d_hidden and n_way must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.hops < 0:
            raise ValueError("hops must be >= 0")

    def init_params(self, seed) -> ParamSet:
        return ParamSet.init(self.d, self.d_hidden, self.n_way, seed)


@dataclass(frozen=True, eq=False)
class GroupForward:
    prototype: torch.Tensor
    deltas: torch.Tensor
    attention: torch.Tensor
    scores: torch.Tensor
    representation: torch.Tensor
    shared_label: int | None = None


@dataclass(frozen=True, eq=False)
class EpisodeBatch:
    """Several same-shaped episodes stacked along a leading task axis."""

    support_nodes: np.ndarray
    support_targets: np.ndarray
    query_nodes: np.ndarray
    query_targets: np.ndarray
    n_way: int

    @classmethod
    def stack(cls, episodes) -> "EpisodeBatch":
        episodes = list(episodes)
        if not episodes:
            raise ValueError("cannot stack an empty list of episodes")
        return cls(
            support_nodes=np.stack([e.support_nodes for e in episodes]),
            support_targets=np.stack([e.support_targets for e in episodes]),
            query_nodes=np.stack([e.query_nodes for e in episodes]),
            query_targets=np.stack([e.query_targets for e in episodes]),
            n_way=episodes[0].n_way,
        )

    def __len__(self) -> int:
        return self.support_nodes.shape[0]

    def nodes(self, subset: str) -> np.ndarray:
        return self.support_nodes if subset == "support" else self.query_nodes

    def targets(self, subset: str) -> np.ndarray:
        return self.support_targets if subset == "support" else self.query_targets


def _rows(propagated, nodes) -> torch.Tensor:
    mat = propagated.matrix if isinstance(propagated, PropagatedFeatures) else propagated
    if isinstance(mat, torch.Tensor):
        return mat[torch.as_tensor(np.asarray(nodes))]
    return torch.from_numpy(np.array(mat[np.asarray(nodes)], dtype=np.float64))


def _task_view(t: torch.Tensor, batched: bool, core_dims: int, extra: int) -> torch.Tensor:
    """Insert ``extra`` singleton axes after the task axis of a batched parameter."""
    if not batched:
        return t
    return t.reshape(t.shape[0], *([1] * extra), *t.shape[t.dim() - core_dims :])


def encode(features, W_e: torch.Tensor) -> torch.Tensor:
    """``z = x W_e`` for each propagated feature row."""
    x = as_tensor(features)
    if x.shape[-1] != W_e.shape[-2]:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match encoder input {W_e.shape[-2]}")
    if W_e.dim() == 3:
        return x @ _task_view(W_e, True, 2, x.dim() - 3)
    return x @ W_e


def group_statistics(embeddings: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    z = as_tensor(embeddings)
    if z.shape[-2] == 0:
        raise ValueError("empty interpolation group")
    p = z.mean(dim=-2, keepdim=True)
    return p.squeeze(-2), z - p


def _member_logits(embeddings, deltas, w) -> torch.Tensor:
    """``h_j = w . [z_j || delta_j]`` for every member."""
    zt = torch.cat([embeddings, deltas], dim=-1)
    if zt.shape[-1] != w.shape[-1]:
        raise ValueError(f"[z || delta] has length {zt.shape[-1]} but w has {w.shape[-1]}")
    col = w.unsqueeze(-1)
    if w.dim() == 2:
        col = _task_view(col, True, 2, zt.dim() - 3)
    return (zt @ col).squeeze(-1)


def _attention_from_logits(h, a, leaky_slope) -> torch.Tensor:
    if a.shape[-1] != 2:
        raise ValueError(f"attention vector must have length 2, got {a.shape[-1]}")
    a0, a1 = a[..., 0], a[..., 1]
    if a.dim() == 2:
        a0 = _task_view(a0, True, 0, h.dim())
        a1 = _task_view(a1, True, 0, h.dim())
    e = leaky_relu(a0 * h.unsqueeze(-1) + a1 * h.unsqueeze(-2), leaky_slope)
    return softmax(e, dim=-1)


def attention_weights(embeddings, deltas, w, a, leaky_slope: float = 0.2) -> torch.Tensor:
    """Row-stochastic ``(M, M)`` attention over all group members, self included."""
    h = _member_logits(as_tensor(embeddings), as_tensor(deltas), w)
    return _attention_from_logits(h, a, leaky_slope)


def _scores_from_logits(attention, h) -> torch.Tensor:
    if attention.shape[-1] != h.shape[-1]:
        raise ValueError("attention and group size disagree")
    return sigmoid((attention @ h.unsqueeze(-1)).squeeze(-1))


def confidence_scores(embeddings, deltas, attention, w) -> torch.Tensor:
    h = _member_logits(as_tensor(embeddings), as_tensor(deltas), w)
    return _scores_from_logits(attention, h)


def interpolate_group(embeddings, scores) -> torch.Tensor:
    z = as_tensor(embeddings)
    if z.shape[-2] == 1:
        # normalization cancels; skip it so the result is exactly z
        return z.squeeze(-2)
    s = as_tensor(scores)
    total = torch.clamp(s.sum(dim=-1, keepdim=True), min=SCORE_FLOOR)
    weights = s / total
    return (weights.unsqueeze(-1) * z).sum(dim=-2)


def classify(c, W_c, b_c) -> torch.Tensor:
    c = as_tensor(c)
    if c.shape[-1] != W_c.shape[-2]:
        raise ValueError(f"representation has length {c.shape[-1]} but W_c expects {W_c.shape[-2]}")
    if W_c.dim() == 3:
        W_c = _task_view(W_c, True, 2, c.dim() - 3)
        b_c = _task_view(b_c, True, 1, c.dim() - 2)
    return softmax(c @ W_c + b_c, dim=-1)


def forward_group(embeddings, params: ParamSet, leaky_slope: float = 0.2, shared_label=None) -> GroupForward:
    """Every intermediate of the full interpolation for a single group."""
    z = as_tensor(embeddings)
    p, deltas = group_statistics(z)
    alpha = attention_weights(z, deltas, params.w, params.a, leaky_slope)
    s = confidence_scores(z, deltas, alpha, params.w)
    return GroupForward(p, deltas, alpha, s, interpolate_group(z, s), shared_label)


def group_representations(
    embeddings: torch.Tensor, params: ParamSet, variant: str = "full", leaky_slope: float = 0.2
) -> torch.Tensor:
    """Collapse ``(..., G, M, d')`` embeddings to ``(..., G, d')`` per the variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    m = embeddings.shape[-2]
    if variant == "naive":
        if m != 1:
            raise ValueError(f"the naive variant needs singleton groups, got M={m}")
        return embeddings.squeeze(-2)
    if m == 1:
        return embeddings.squeeze(-2)
    p, deltas = group_statistics(embeddings)
    if variant == "mean":
        return p
    h = _member_logits(embeddings, deltas, params.w)
    if variant == "mlp":
        s = sigmoid(h)
    else:
        s = _scores_from_logits(_attention_from_logits(h, params.a, leaky_slope), h)
    return interpolate_group(embeddings, s)


def episode_probabilities(
    episode: InterpolatedEpisode | EpisodeBatch,
    propagated,
    params: ParamSet,
    subset: str = "query",
    variant: str = "full",
    leaky_slope: float = 0.2,
) -> torch.Tensor:
    """Class probabilities per group, ``(G, N)`` or ``(B, G, N)`` for a batch."""
    if subset not in ("support", "query"):
        raise ValueError(f"subset must be 'support' or 'query', got {subset!r}")
    if params.W_c.shape[-1] != episode.n_way:
        raise ValueError(f"classifier has {params.W_c.shape[-1]} outputs for a {episode.n_way}-way episode")
    z = encode(_rows(propagated, episode.nodes(subset)), params.W_e)
    c = group_representations(z, params, variant, leaky_slope)
    return classify(c, params.W_c, params.b_c)


def episode_loss(
    episode: InterpolatedEpisode | EpisodeBatch,
    propagated,
    params: ParamSet,
    subset: str = "support",
    variant: str = "full",
    leaky_slope: float = 0.2,
) -> torch.Tensor:
    """Mean cross-entropy over the groups in ``subset`` (one value per task for a batch)."""
    probs = episode_probabilities(episode, propagated, params, subset, variant, leaky_slope)
    targets = torch.as_tensor(episode.targets(subset))
    return cross_entropy(probs, targets).mean(dim=-1)


def predict(probabilities: torch.Tensor) -> np.ndarray:
    """Argmax with ties going to the lowest class index."""
    return np.argmax(probabilities.detach().numpy(), axis=-1)

