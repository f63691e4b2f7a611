"""Command line entry point: ``metagin <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, DivergenceError, GraphError, MetaGINError, SamplingError
from .harness.bundle import load_dataset, load_labels, load_params, save_params, write_labels
from .harness.experiment import (
    ExperimentConfig,
    ExperimentError,
    evaluate_test,
    run_ablation,
    run_experiment,
    run_noise_sweep,
)
from .harness.report import write_report
from .harness.synth import generate_sbm
from .meta import MetaConfig, train
from .noise import corrupt_graph_labels

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

logger = logging.getLogger("metagin")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_config(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_file(path)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def cmd_synth(args) -> int:
    bundle = generate_sbm(
        num_classes=args.classes,
        nodes_per_class=args.nodes_per_class,
        p_in=args.p_in,
        p_out=args.p_out,
        dim=args.dim,
        mean_separation=args.separation,
        feature_std=args.std,
        split_counts=args.splits,
        seed=args.seed,
        name=Path(args.out).name,
    )
    bundle.write(args.out)
    print(f"wrote {len(bundle.labels)} nodes, {len(bundle.edges)} edges to {args.out}")
    return EXIT_OK


def cmd_inject_noise(args) -> int:
    graph = load_dataset(args.data)
    weak, results = corrupt_graph_labels(graph, args.kind, args.epsilon, args.seed)
    write_labels(args.out, weak, original=graph.labels)
    for split, noisy in results.items():
        print(f"{split}: flipped {int(noisy.flip_mask.sum())} of {noisy.flip_mask.size} labels")
    return EXIT_OK


def _write_log(path, log) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "train_loss", "val_accuracy", "val_true_accuracy"])
        for rec in log:
            writer.writerow([rec.episode, repr(rec.train_loss), repr(rec.val_accuracy), repr(rec.val_true_accuracy)])


def _params_metadata(config: ExperimentConfig, model_config, seed) -> dict:
    meta = config.meta_config()
    return {
        "variant": config.variant,
        "n_way": config.n_way,
        "hops": model_config.hops,
        "leaky_slope": model_config.leaky_slope,
        "inner_lr": meta.inner_lr,
        "finetune_steps": meta.finetune_steps,
        "seed": seed,
    }


def cmd_train(args) -> int:
    config = _load_config(args.config)
    graph = load_dataset(args.data)
    if args.labels:
        weak = load_labels(args.labels, graph.num_nodes)
    else:
        weak, _ = corrupt_graph_labels(graph, config.noise_kind, config.epsilon, args.seed)
    model_config = config.model_config(graph.num_features)
    propagated = graph.propagated(model_config.hops)
    params, log = train(graph, weak, propagated, model_config, config.meta_config(), args.seed, config.variant)
    save_params(params, args.out, _params_metadata(config, model_config, args.seed))
    if args.log:
        _write_log(args.log, log)
    if log:
        best = max(log, key=lambda r: r.val_accuracy)
        print(f"best validation accuracy {best.val_accuracy:.4f} at episode {best.episode}")
    return EXIT_OK


def cmd_eval(args) -> int:
    graph = load_dataset(args.data)
    params, meta = load_params(args.params)
    if params.W_e.shape[0] != graph.num_features:
        raise DataError(f"parameters expect {params.W_e.shape[0]} features, dataset has {graph.num_features}")
    config = MetaConfig(
        inner_lr=args.inner_lr if args.inner_lr is not None else meta.get("inner_lr", 0.1),
        finetune_steps=args.finetune_steps if args.finetune_steps is not None else meta.get("finetune_steps", 10),
        n_way=args.n_way,
        k_shot=args.k_shot,
        k_query=args.query,
    )
    propagated = graph.propagated(meta.get("hops", 2))
    accs = evaluate_test(
        params, graph, propagated, config, args.query, args.tasks, args.seed, meta.get("leaky_slope", 0.2)
    )
    summary = {"tasks": len(accs), "mean_acc": float(np.mean(accs)), "std_acc": float(np.std(accs))}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reps = []
    record = run_experiment(config, keep=reps)
    write_report([record], out)
    d = reps[0].params.W_e.shape[0]
    model_config = config.model_config(d)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    for rep in reps:
        meta = _params_metadata(config, model_config, rep.seeds["train"])
        save_params(rep.params, ckpt / f"rep{rep.index}.json", meta)
        _write_log(ckpt / f"rep{rep.index}_train_log.csv", rep.log)
        if rep.index == 0:
            save_params(rep.params, out / "params.json", meta)
    print(f"{config.variant}: {record.mean:.4f} +- {record.std:.4f} over {len(record.accuracies)} repetitions")
    return EXIT_OK


def cmd_ablate(args) -> int:
    records = run_ablation(_load_config(args.config))
    write_report(records, args.out)
    for r in records:
        print(f"{r.config['variant']:>6}: {r.mean:.4f} +- {r.std:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    try:
        records = run_noise_sweep(config, args.epsilons)
    except ValueError as exc:
        if isinstance(exc, MetaGINError):
            raise
        raise UsageError(str(exc)) from None
    write_report(records, args.out)
    for r in records:
        print(f"eps={r.config['epsilon']:.2f}: {r.mean:.4f} +- {r.std:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metagin", description="Weakly-supervised few-shot node classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a stochastic block model dataset bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--nodes-per-class", type=int, required=True)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--separation", type=float, required=True)
    p.add_argument("--std", type=float, required=True)
    p.add_argument("--splits", type=_int_list, required=True, help="train,val,test class counts")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject-noise", help="corrupt train/validation labels of a bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["sym", "asym", "symmetric", "asymmetric"], required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("train", help="meta-train on a bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--labels", help="noisy label file from inject-noise (default: inject per config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate parameters on clean meta-test tasks")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--n-way", type=int, required=True)
    p.add_argument("--k-shot", type=int, required=True)
    p.add_argument("--query", type=int, default=5)
    p.add_argument("--tasks", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--finetune-steps", type=int)
    p.add_argument("--inner-lr", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full protocol: noise, train, evaluate, report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run the four model variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="run one experiment per noise ratio")
    p.add_argument("--config", required=True)
    p.add_argument("--epsilons", type=_float_list, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"metagin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"metagin: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ExperimentError as exc:
        cause = exc.__cause__
        print(f"metagin: {exc}", file=sys.stderr)
        return EXIT_DIVERGED if isinstance(cause, DivergenceError) else EXIT_DATA
    except (DataError, GraphError, SamplingError) as exc:
        print(f"metagin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"metagin: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
