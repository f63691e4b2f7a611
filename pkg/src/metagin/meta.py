"""MAML-style meta-optimization over interpolated episodes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .episodes import FewShotTask, InterpolatedEpisode, as_episode, sample_episode
from .errors import DivergenceError
from .model import EpisodeBatch, ModelConfig, episode_loss, episode_probabilities, predict
from .numerics import ParamSet, glorot, with_grad

logger = logging.getLogger(__name__)

EXACT_PARAM_LIMIT = 5000

# seed-derivation tags
_INIT = 11
_TRAIN_EPISODE = 12
_VALIDATION = 13
_HEAD = 14


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative ints."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.1
    meta_lr: float = 0.001
    inner_steps: int = 1
    tasks_per_batch: int = 5
    max_episodes: int = 2000
    meta_gradient_mode: str = "auto"
    patience: int = 10
    val_interval: int = 100
    val_tasks: int = 20
    finetune_steps: int = 10
    n_way: int = 2
    k_shot: int = 1
    k_query: int = 5
    group_size: int = 5

    def __post_init__(self):
        if self.inner_lr < 0 or self.meta_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.inner_steps < 1 or self.tasks_per_batch < 1:
            raise ValueError("inner_steps and tasks_per_batch must be >= 1")
        if self.meta_gradient_mode not in ("auto", "exact", "first_order"):
            raise ValueError(f"unknown meta_gradient_mode {self.meta_gradient_mode!r}")
        if min(self.n_way, self.k_shot, self.group_size) < 1 or self.k_query < 1:
            raise ValueError("episode shape entries must be >= 1")
        if self.max_episodes < 0 or self.val_interval < 1 or self.patience < 1 or self.val_tasks < 1:
            raise ValueError("invalid training schedule")

    def resolved_mode(self, num_params: int) -> str:
        if self.meta_gradient_mode != "auto":
            return self.meta_gradient_mode
        return "exact" if num_params <= EXACT_PARAM_LIMIT else "first_order"


@dataclass(frozen=True, eq=False)
class TrainingState:
    params: ParamSet
    episode_counter: int = 0
    best_validation_accuracy: float = 0.0
    best_params: ParamSet | None = None
    best_episode: int = 0
    seeds: dict = field(default_factory=dict)


@dataclass
class CheckRecord:
    episode: int
    train_loss: float
    val_accuracy: float
    val_true_accuracy: float


LossFn = Callable[[ParamSet], torch.Tensor]


def _check_finite(loss: torch.Tensor, what: str) -> None:
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite {what}: {float(loss.detach())}")


def adapt(params: ParamSet, loss_fn: LossFn, lr: float, steps: int, create_graph: bool = False) -> ParamSet:
    """``steps`` plain gradient steps on ``loss_fn``.

    ``loss_fn`` may return one loss per task when ``params`` carry a task
    axis; the per-task losses are summed, which gives each slice its own
    gradient. With ``create_graph`` the result stays differentiable with
    respect to ``params``; otherwise it is detached.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    current = params if create_graph else with_grad(params)
    for _ in range(steps):
        loss = loss_fn(current).sum()
        _check_finite(loss, "inner loss")
        tensors = current.tensors()
        grads = torch.autograd.grad(loss, tensors, create_graph=create_graph, allow_unused=True)
        new = []
        for t, g in zip(tensors, grads):
            if g is None:
                new.append(t)
            elif create_graph:
                new.append(t - lr * g)
            else:
                new.append((t - lr * g).detach().requires_grad_(True))
        current = ParamSet(*new)
    return current if create_graph else current.detach()


def meta_gradient(
    params: ParamSet,
    support_fn: LossFn,
    query_fn: LossFn,
    inner_lr: float,
    inner_steps: int = 1,
    mode: str = "exact",
    batch_size: int | None = None,
) -> tuple[ParamSet, float]:
    """Gradient of the summed post-adaptation query loss, and that sum.

    With ``batch_size`` the parameters are expanded along a task axis and the
    loss functions must return one value per task; otherwise they return a
    scalar. ``first_order`` treats adapted parameters as constants.
    """
    if mode == "exact":
        leaves = with_grad(params)
        start = leaves if batch_size is None else leaves.expand(batch_size)
        adapted = adapt(start, support_fn, inner_lr, inner_steps, create_graph=True)
        q = query_fn(adapted).sum()
        _check_finite(q, "query loss")
        grads = torch.autograd.grad(q, leaves.tensors(), allow_unused=True)
    elif mode == "first_order":
        start = params if batch_size is None else params.expand(batch_size)
        adapted = with_grad(adapt(start, support_fn, inner_lr, inner_steps))
        q = query_fn(adapted).sum()
        _check_finite(q, "query loss")
        grads = torch.autograd.grad(q, adapted.tensors(), allow_unused=True)
        if batch_size is not None:
            grads = tuple(None if g is None else g.sum(dim=0) for g in grads)
    else:
        raise ValueError(f"unknown meta-gradient mode {mode!r}")
    grad = ParamSet(
        *(torch.zeros_like(t) if g is None else g.detach() for t, g in zip(params.tensors(), grads))
    )
    return grad, float(q.detach())


def _episode_fns(episode, propagated, variant, slope) -> tuple[LossFn, LossFn]:
    return (
        lambda p: episode_loss(episode, propagated, p, "support", variant, slope),
        lambda p: episode_loss(episode, propagated, p, "query", variant, slope),
    )


def inner_adapt(
    params: ParamSet,
    episode: InterpolatedEpisode,
    propagated,
    lr: float,
    steps: int = 1,
    variant: str = "full",
    leaky_slope: float = 0.2,
) -> ParamSet:
    """Adapted copy of ``params`` after ``steps`` steps on the support loss."""
    support_fn, _ = _episode_fns(episode, propagated, variant, leaky_slope)
    return adapt(params, support_fn, lr, steps)


def batch_meta_gradient(
    params: ParamSet,
    batch: Sequence[InterpolatedEpisode],
    propagated,
    config: MetaConfig,
    variant: str = "full",
    leaky_slope: float = 0.2,
    mode: str | None = None,
) -> tuple[ParamSet, float]:
    """Meta-gradient of ``sum_i L_query_i(theta_i')`` over a batch of episodes."""
    if not batch:
        raise ValueError("empty meta-batch")
    mode = mode or config.resolved_mode(params.numel())
    stacked = EpisodeBatch.stack(batch)
    support_fn, query_fn = _episode_fns(stacked, propagated, variant, leaky_slope)
    return meta_gradient(params, support_fn, query_fn, config.inner_lr, config.inner_steps, mode, len(stacked))


def meta_step(
    state: TrainingState,
    batch: Sequence[InterpolatedEpisode],
    propagated,
    config: MetaConfig,
    variant: str = "full",
    leaky_slope: float = 0.2,
) -> tuple[TrainingState, float]:
    """One outer update ``theta <- theta - beta * grad sum_i L_query_i(theta_i')``.

    Returns the new state and the summed query loss at the old parameters.
    """
    grad, meta_loss = batch_meta_gradient(state.params, batch, propagated, config, variant, leaky_slope)
    if not all(torch.isfinite(t).all() for t in grad.tensors()):
        raise DivergenceError("non-finite meta-gradient", state=state)
    new_params = state.params.zip_map(grad, lambda t, g: t - config.meta_lr * g)
    return replace(state, params=new_params, episode_counter=state.episode_counter + 1), meta_loss


def _episode_batch(graph, weak_labels, config: MetaConfig, seed: int, episode: int) -> list[InterpolatedEpisode]:
    return [
        sample_episode(
            graph,
            weak_labels,
            "train",
            config.n_way,
            config.k_shot,
            config.k_query,
            config.group_size,
            derive_seed(seed, _TRAIN_EPISODE, episode, b),
        )
        for b in range(config.tasks_per_batch)
    ]


def validation_scores(
    params: ParamSet,
    graph,
    weak_labels,
    propagated,
    config: MetaConfig,
    n_tasks: int,
    seed: int,
    variant: str = "full",
    leaky_slope: float = 0.2,
) -> tuple[float, float]:
    """Mean query accuracy against weak labels, and against true labels.

    Each validation episode adapts a private copy of ``params`` on its
    interpolated support set first. True-label accuracy counts every group
    member whose ground-truth class equals the group's prediction.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    if not graph.splits.val:
        raise ValueError("empty validation split")
    weak_hits, true_hits = [], []
    true_labels = np.asarray(graph.labels)
    for t in range(n_tasks):
        ep = sample_episode(
            graph, weak_labels, "val", config.n_way, config.k_shot, config.k_query, config.group_size,
            derive_seed(seed, t),
        )
        adapted = inner_adapt(params, ep, propagated, config.inner_lr, config.inner_steps, variant, leaky_slope)
        with torch.no_grad():
            probs = episode_probabilities(ep, propagated, adapted, "query", variant, leaky_slope)
        pred = predict(probs)
        weak_hits.append(np.mean(pred == ep.query_targets))
        pred_class = np.asarray(ep.class_list)[pred]
        true_hits.append(np.mean(true_labels[ep.query_nodes] == pred_class[:, None]))
    return float(np.mean(weak_hits)), float(np.mean(true_hits))


def evaluate_validation(params, graph, weak_labels, propagated, config, n_tasks, seed, variant="full", leaky_slope=0.2):
    return validation_scores(params, graph, weak_labels, propagated, config, n_tasks, seed, variant, leaky_slope)[0]


def train(
    graph,
    weak_labels,
    propagated,
    model_config: ModelConfig,
    meta_config: MetaConfig,
    seed: int,
    variant: str = "full",
    on_check: Callable[[CheckRecord], None] | None = None,
) -> tuple[ParamSet, list[CheckRecord]]:
    """Meta-train from a seeded initialization; return the best snapshot and the log.

    A validation check runs every ``val_interval`` episodes (and after the
    last one); training stops early after ``patience`` checks without a
    strict improvement.
    """
    if variant == "naive" and meta_config.group_size != 1:
        raise ValueError("the naive variant trains on singleton groups (group_size=1)")
    init_seed = derive_seed(seed, _INIT)
    val_seed = derive_seed(seed, _VALIDATION)
    params = model_config.init_params(init_seed)
    state = TrainingState(
        params=params,
        best_params=params,
        best_validation_accuracy=0.0,
        seeds={"train": int(seed), "init": init_seed, "validation": val_seed},
    )
    log: list[CheckRecord] = []
    if meta_config.max_episodes == 0:
        return params, log

    slope = model_config.leaky_slope
    window: list[float] = []
    stale = 0
    best = -1.0
    for episode in range(meta_config.max_episodes):
        batch = _episode_batch(graph, weak_labels, meta_config, seed, episode)
        try:
            state, loss = meta_step(state, batch, propagated, meta_config, variant, slope)
        except DivergenceError as exc:
            logger.error("diverged at episode %d: %s", episode, exc)
            raise DivergenceError(str(exc), state=state) from exc
        window.append(loss / len(batch))
        last = episode + 1 == meta_config.max_episodes
        if (episode + 1) % meta_config.val_interval and not last:
            continue
        acc, true_acc = validation_scores(
            state.params, graph, weak_labels, propagated, meta_config, meta_config.val_tasks, val_seed, variant, slope
        )
        record = CheckRecord(state.episode_counter, float(np.mean(window)), acc, true_acc)
        log.append(record)
        window = []
        if on_check is not None:
            on_check(record)
        if acc > best:
            best, stale = acc, 0
            state = replace(
                state, best_validation_accuracy=acc, best_params=state.params, best_episode=state.episode_counter
            )
        else:
            stale += 1
            if stale >= meta_config.patience:
                break
    return state.best_params, log


def _reset_head(params: ParamSet, n_way: int, seed: int) -> ParamSet:
    rng = np.random.default_rng(derive_seed(seed, _HEAD))
    dh = params.W_e.shape[1]
    return params.replace(W_c=glorot((dh, n_way), dh, n_way, rng), b_c=torch.zeros(n_way, dtype=params.b_c.dtype))


def finetune_and_predict(
    params: ParamSet,
    task: FewShotTask,
    propagated,
    config: MetaConfig,
    leaky_slope: float = 0.2,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Fine-tune a copy of ``params`` on the clean support set, classify the query.

    Representations are plain embeddings (no interpolation). Only the encoder
    and classifier move; ``w`` and ``a`` are unused. Returns predicted class
    ids for the query nodes and the query accuracy.
    """
    local = params.detach()
    if local.W_c.shape[1] != task.n_way:
        local = _reset_head(local, task.n_way, seed)
    ep = as_episode(task)
    support_fn = lambda p: episode_loss(ep, propagated, p, "support", "naive", leaky_slope)  # noqa: E731
    for _ in range(config.finetune_steps):
        leaves = with_grad(local)
        loss = support_fn(leaves)
        _check_finite(loss, "fine-tuning loss")
        g_e, g_c, g_b = torch.autograd.grad(loss, [leaves.W_e, leaves.W_c, leaves.b_c])
        lr = config.inner_lr
        local = local.replace(W_e=local.W_e - lr * g_e, W_c=local.W_c - lr * g_c, b_c=local.b_c - lr * g_b)
    with torch.no_grad():
        probs = episode_probabilities(ep, propagated, local, "query", "naive", leaky_slope)
    pred = predict(probs)
    accuracy = float(np.mean(pred == task.query_targets()))
    return np.asarray(task.class_list)[pred], accuracy
