"""N-way K-shot task sampling and cross-task interpolation groups.

A task set is M tasks over the same N classes. Slot k of every task's support
(or query) list holds a node of the same weak class, so reading slot k across
the M tasks gives one interpolation group.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import SamplingError

# sub-stream tags of an episode seed
_CLASS_STREAM = 1
_NODE_STREAM = 2
_FALLBACK_STREAM = 3


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag])


@dataclass(frozen=True, eq=False)
class FewShotTask:
    """Support/query node ids with their (weak or clean) labels.

    Entries are ordered by class position, then within-class index.
    """

    support_nodes: np.ndarray
    support_labels: np.ndarray
    query_nodes: np.ndarray
    query_labels: np.ndarray
    class_list: tuple[int, ...]

    @property
    def n_way(self) -> int:
        return len(self.class_list)

    @property
    def k_shot(self) -> int:
        return self.support_nodes.size // self.n_way

    @property
    def k_query(self) -> int:
        return self.query_nodes.size // self.n_way

    @property
    def support(self) -> list[tuple[int, int]]:
        return list(zip(self.support_nodes.tolist(), self.support_labels.tolist()))

    @property
    def query(self) -> list[tuple[int, int]]:
        return list(zip(self.query_nodes.tolist(), self.query_labels.tolist()))

    def support_targets(self) -> np.ndarray:
        """Support labels as positions into ``class_list``."""
        return np.repeat(np.arange(self.n_way), self.k_shot)

    def query_targets(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), self.k_query)


@dataclass(frozen=True, eq=False)
class TaskSet:
    tasks: tuple[FewShotTask, ...]
    class_list: tuple[int, ...]

    def __post_init__(self):
        if not self.tasks:
            raise SamplingError("a task set needs at least one task")
        for t in self.tasks:
            if t.class_list != self.class_list:
                raise SamplingError("tasks in a task set must share one class list")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class InterpolationGroup:
    member_nodes: tuple[int, ...]
    shared_label: int
    slot_role: str


@dataclass(frozen=True, eq=False)
class InterpolatedEpisode:
    """Node ids arranged as (groups, M) plus per-group targets.

    ``*_targets`` are positions into ``class_list``; ``*_labels`` the class ids.
    """

    support_nodes: np.ndarray
    support_targets: np.ndarray
    query_nodes: np.ndarray
    query_targets: np.ndarray
    class_list: tuple[int, ...]

    @property
    def group_size(self) -> int:
        return self.support_nodes.shape[1]

    @property
    def n_way(self) -> int:
        return len(self.class_list)

    @property
    def support_labels(self) -> np.ndarray:
        return np.asarray(self.class_list)[self.support_targets]

    @property
    def query_labels(self) -> np.ndarray:
        return np.asarray(self.class_list)[self.query_targets]

    def nodes(self, subset: str) -> np.ndarray:
        return self.support_nodes if subset == "support" else self.query_nodes

    def targets(self, subset: str) -> np.ndarray:
        return self.support_targets if subset == "support" else self.query_targets

    def groups(self, subset: str) -> Iterator[InterpolationGroup]:
        labels = self.support_labels if subset == "support" else self.query_labels
        for row, y in zip(self.nodes(subset), labels):
            yield InterpolationGroup(tuple(int(v) for v in row), int(y), subset)

    @property
    def support_groups(self) -> list[InterpolationGroup]:
        return list(self.groups("support"))

    @property
    def query_groups(self) -> list[InterpolationGroup]:
        return list(self.groups("query"))


def class_pools(labels: np.ndarray, classes: Sequence[int]) -> dict[int, np.ndarray]:
    return {int(c): np.flatnonzero(labels == c) for c in classes}


def sample_task_set(
    graph,
    labels,
    split: str,
    n_way: int,
    k_shot: int,
    k_query: int,
    num_tasks: int,
    seed: int,
) -> TaskSet:
    """Sample ``num_tasks`` N-way tasks over classes of ``split``.

    ``labels`` is the (weak) label vector used for pooling, indexed by node id;
    ``None`` means the graph's own labels. Per class, tasks take disjoint node
    chunks until the pool runs dry; later tasks redraw from the full pool.
    Within one task nodes never repeat.
    """
    labels = np.asarray(graph.labels if labels is None else labels)
    classes = [int(c) for c in graph.splits[split]]
    if n_way < 1 or k_shot < 1 or k_query < 0 or num_tasks < 1:
        raise SamplingError("n_way, k_shot, num_tasks must be >= 1 and k_query >= 0")
    if len(classes) < n_way:
        raise SamplingError(f"split has {len(classes)} classes, need {n_way}")
    per_task = k_shot + k_query
    pools = class_pools(labels, classes)

    class_rng = _stream(seed, _CLASS_STREAM)
    chosen = class_rng.choice(len(classes), size=n_way, replace=False)
    class_list = tuple(classes[i] for i in chosen)
    for c in class_list:
        if pools[c].size < per_task:
            raise SamplingError(f"class {c} has {pools[c].size} nodes, need {per_task}")

    node_rng = _stream(seed, _NODE_STREAM)
    fallback_rng = _stream(seed, _FALLBACK_STREAM)
    picks = np.empty((num_tasks, n_way, per_task), dtype=np.int64)
    for j, c in enumerate(class_list):
        pool = pools[c]
        order = node_rng.permutation(pool)
        fresh = pool.size // per_task
        for t in range(num_tasks):
            if t < fresh:
                picks[t, j] = order[t * per_task : (t + 1) * per_task]
            else:
                picks[t, j] = fallback_rng.choice(pool, size=per_task, replace=False)

    tasks = tuple(_make_task(picks[t], labels, class_list, k_shot) for t in range(num_tasks))
    return TaskSet(tasks=tasks, class_list=class_list)


def _make_task(picks: np.ndarray, labels: np.ndarray, class_list, k_shot: int) -> FewShotTask:
    support = picks[:, :k_shot].reshape(-1)
    query = picks[:, k_shot:].reshape(-1)
    return FewShotTask(
        support_nodes=support,
        support_labels=labels[support],
        query_nodes=query,
        query_labels=labels[query],
        class_list=class_list,
    )


def build_interpolation_groups(task_set: TaskSet) -> InterpolatedEpisode:
    """Group slot k of every task into one row of an ``InterpolatedEpisode``."""
    class_list = task_set.class_list
    first = task_set.tasks[0]
    for t in task_set.tasks:
        if t.class_list != class_list:
            raise SamplingError("tasks have mismatched class lists")
        if t.support_nodes.size != first.support_nodes.size or t.query_nodes.size != first.query_nodes.size:
            raise SamplingError("tasks have mismatched support/query sizes")
    support = np.stack([t.support_nodes for t in task_set.tasks], axis=1)
    query = np.stack([t.query_nodes for t in task_set.tasks], axis=1)
    return InterpolatedEpisode(
        support_nodes=support,
        support_targets=first.support_targets(),
        query_nodes=query,
        query_targets=first.query_targets(),
        class_list=class_list,
    )


def sample_episode(
    graph, labels, split: str, n_way: int, k_shot: int, k_query: int, num_tasks: int, seed: int
) -> InterpolatedEpisode:
    return build_interpolation_groups(
        sample_task_set(graph, labels, split, n_way, k_shot, k_query, num_tasks, seed)
    )


def sample_meta_test_task(graph, n_way: int, k_shot: int, k_query: int, seed: int, split: str = "test") -> FewShotTask:
    """One task from the (clean-labelled) test split."""
    ts = sample_task_set(graph, None, split, n_way, k_shot, k_query, 1, seed)
    return ts.tasks[0]


def as_episode(task: FewShotTask) -> InterpolatedEpisode:
    """View a single task as an episode of singleton groups."""
    return build_interpolation_groups(TaskSet(tasks=(task,), class_list=task.class_list))
