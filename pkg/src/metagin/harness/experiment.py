"""Experiment protocol: inject noise, meta-train, evaluate on clean test tasks."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..episodes import sample_meta_test_task
from ..errors import MetaGINError
from ..graph import AttributedGraph
from ..meta import CheckRecord, MetaConfig, derive_seed, finetune_and_predict, train
from ..model import VARIANTS, ModelConfig
from ..noise import canonical_kind, corrupt_graph_labels
from ..numerics import ParamSet
from .bundle import load_dataset
from .synth import generate_sbm

logger = logging.getLogger(__name__)

_NOISE = 21
_TRAIN = 22
_TEST = 23

# desk-scale benchmark graph
DEFAULT_SYNTHETIC = {
    "num_classes": 10,
    "nodes_per_class": 60,
    "p_in": 0.1,
    "p_out": 0.01,
    "dim": 16,
    "mean_separation": 4.0,
    "feature_std": 1.0,
    "split_counts": [6, 2, 2],
    "seed": 0,
}

_META_SHAPE_FIELDS = ("n_way", "k_shot", "k_query", "group_size")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    synthetic: dict | None = None
    n_way: int = 2
    k_shot: int = 1
    k_query: int = 5
    group_size: int = 5
    noise_kind: str = "symmetric"
    epsilon: float = 0.3
    model: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    n_test_tasks: int = 100
    n_repetitions: int = 10
    master_seed: int = 0
    variant: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "noise_kind", canonical_kind(self.noise_kind))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "naive" and self.group_size != 1:
            raise ValueError("the naive variant runs with group_size=1")
        if self.n_test_tasks < 1 or self.n_repetitions < 1:
            raise ValueError("n_test_tasks and n_repetitions must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.dataset is None and self.synthetic is None:
            object.__setattr__(self, "synthetic", dict(DEFAULT_SYNTHETIC))
        bad = set(self.meta) & set(_META_SHAPE_FIELDS)
        if bad:
            raise ValueError(f"episode shape {sorted(bad)} belongs at the top level of the config")
        # validate sub-configs early
        self.meta_config()
        ModelConfig(d=1, n_way=self.n_way, **self.model)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def meta_config(self) -> MetaConfig:
        return MetaConfig(
            **self.meta, n_way=self.n_way, k_shot=self.k_shot, k_query=self.k_query, group_size=self.group_size
        )

    def model_config(self, d: int) -> ModelConfig:
        return ModelConfig(d=d, n_way=self.n_way, **self.model)

    def dataset_name(self) -> str:
        if self.dataset is not None:
            return Path(self.dataset).name
        return "sbm-" + hashlib.sha256(json.dumps(self.synthetic, sort_keys=True).encode()).hexdigest()[:8]


@dataclass
class RepetitionResult:
    index: int
    seed: int
    accuracy: float
    task_accuracies: list[float]
    params: ParamSet
    log: list[CheckRecord]
    seeds: dict


@dataclass
class ResultRecord:
    fingerprint: str
    config: dict
    dataset: str
    accuracies: list[float]
    wall_s: float
    seed_lineage: list[dict]
    mean: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        acc = np.asarray(self.accuracies, dtype=np.float64)
        self.mean = float(acc.mean())
        self.std = float(acc.std())

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


class ExperimentError(MetaGINError):
    def __init__(self, message, repetition=None):
        super().__init__(message if repetition is None else f"repetition {repetition}: {message}")
        self.repetition = repetition


def repetition_seed(master_seed: int, r: int) -> int:
    h = hashlib.sha256(f"{int(master_seed)}:{int(r)}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def load_graph(config: ExperimentConfig) -> AttributedGraph:
    if config.dataset is not None:
        return load_dataset(config.dataset)
    return generate_sbm(**config.synthetic).to_graph()


def evaluate_test(params, graph, propagated, meta_config: MetaConfig, k_query: int, n_tasks: int, seed: int, slope=0.2):
    """Accuracies of ``n_tasks`` clean meta-test tasks."""
    accs = []
    for t in range(n_tasks):
        task_seed = derive_seed(seed, t)
        task = sample_meta_test_task(graph, meta_config.n_way, meta_config.k_shot, k_query, task_seed)
        _, acc = finetune_and_predict(params, task, propagated, meta_config, slope, seed=task_seed)
        accs.append(acc)
    return accs


def run_repetition(config: ExperimentConfig, r: int, graph: AttributedGraph | None = None) -> RepetitionResult:
    """One repetition end to end; reproducible in isolation from (config, r)."""
    graph = graph if graph is not None else load_graph(config)
    seed = repetition_seed(config.master_seed, r)
    seeds = {
        "repetition": seed,
        "noise": derive_seed(seed, _NOISE),
        "train": derive_seed(seed, _TRAIN),
        "test": derive_seed(seed, _TEST),
    }
    model_config = config.model_config(graph.num_features)
    meta_config = config.meta_config()
    propagated = graph.propagated(model_config.hops)
    weak, _ = corrupt_graph_labels(graph, config.noise_kind, config.epsilon, seeds["noise"])
    params, log = train(graph, weak, propagated, model_config, meta_config, seeds["train"], config.variant)
    accs = evaluate_test(
        params, graph, propagated, meta_config, config.k_query, config.n_test_tasks, seeds["test"],
        model_config.leaky_slope,
    )
    return RepetitionResult(r, seed, float(np.mean(accs)), accs, params, log, seeds)


def run_experiment(config: ExperimentConfig, keep: list | None = None) -> ResultRecord:
    """All repetitions of one config; per-repetition results go to ``keep`` if given."""
    start = time.perf_counter()
    try:
        graph = load_graph(config)
    except MetaGINError as exc:
        raise ExperimentError(str(exc)) from exc
    reps = []
    for r in range(config.n_repetitions):
        try:
            rep = run_repetition(config, r, graph)
        except MetaGINError as exc:
            raise ExperimentError(str(exc), repetition=r) from exc
        logger.info("%s rep %d: acc %.4f", config.variant, r, rep.accuracy)
        reps.append(rep)
    if keep is not None:
        keep.extend(reps)
    return ResultRecord(
        fingerprint=config.fingerprint(),
        config=config.to_dict(),
        dataset=config.dataset_name(),
        accuracies=[rep.accuracy for rep in reps],
        wall_s=time.perf_counter() - start,
        seed_lineage=[{"index": rep.index, **rep.seeds} for rep in reps],
    )


def ablation_configs(config: ExperimentConfig) -> list[ExperimentConfig]:
    out = []
    for variant in VARIANTS:
        m = 1 if variant == "naive" else config.group_size
        if variant != "naive" and m == 1:
            raise ValueError("ablation needs group_size > 1 for the interpolating variants")
        out.append(config.replace(variant=variant, group_size=m))
    return out


def run_ablation(config: ExperimentConfig) -> list[ResultRecord]:
    """The four variants under one master seed; naive runs with singleton groups."""
    return [run_experiment(c) for c in ablation_configs(config)]


def run_noise_sweep(config: ExperimentConfig, epsilons) -> list[ResultRecord]:
    epsilons = [float(e) for e in epsilons]
    if len(set(epsilons)) != len(epsilons):
        raise ValueError(f"duplicate noise ratios in {epsilons}")
    for e in epsilons:
        if not 0.0 <= e <= 1.0:
            raise ValueError(f"noise ratio {e} outside [0, 1]")
    return [run_experiment(config.replace(epsilon=e)) for e in epsilons]
