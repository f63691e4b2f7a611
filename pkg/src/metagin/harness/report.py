"""Result tables: results.csv, results.json and accuracy-vs-noise plot data."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from .experiment import ResultRecord

CSV_COLUMNS = (
    "fingerprint",
    "dataset",
    "variant",
    "N",
    "K",
    "M",
    "noise_kind",
    "epsilon",
    "rep_count",
    "mean_acc",
    "std_acc",
    "master_seed",
)


def _num(x: float) -> str:
    return repr(float(x))


def csv_row(record: ResultRecord) -> dict[str, str]:
    cfg = record.config
    return {
        "fingerprint": record.fingerprint,
        "dataset": record.dataset,
        "variant": cfg["variant"],
        "N": str(cfg["n_way"]),
        "K": str(cfg["k_shot"]),
        "M": str(cfg["group_size"]),
        "noise_kind": cfg["noise_kind"],
        "epsilon": _num(cfg["epsilon"]),
        "rep_count": str(len(record.accuracies)),
        "mean_acc": _num(record.mean),
        "std_acc": _num(record.std),
        "master_seed": str(cfg["master_seed"]),
    }


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def write_report(records: Sequence[ResultRecord], output) -> list[Path]:
    """Write the report files into directory ``output``; returns their paths.

    Wall-clock time is kept out of results.csv so that reruns produce the
    same bytes; it is recorded in results.json.
    """
    if not records:
        raise ValueError("no records to report")
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "results.csv"
    _write_csv(csv_path, CSV_COLUMNS, [csv_row(r) for r in records])
    written.append(csv_path)

    json_path = out / "results.json"
    json_path.write_text(json.dumps([r.to_dict() for r in records], indent=2, sort_keys=True) + "\n")
    written.append(json_path)

    curves = defaultdict(list)
    for r in records:
        cfg = r.config
        key = (r.dataset, cfg["variant"], cfg["noise_kind"], cfg["n_way"], cfg["k_shot"], cfg["group_size"])
        curves[key].append(r)
    plot_dir = out / "plotdata"
    plot_dir.mkdir(exist_ok=True)
    for (dataset, variant, kind, n, k, m), recs in sorted(curves.items()):
        recs = sorted(recs, key=lambda r: (r.config["epsilon"], r.config["master_seed"]))
        path = plot_dir / f"acc_vs_eps__{dataset}__{variant}__{kind}__N{n}K{k}M{m}.csv"
        rows = [
            {
                "epsilon": _num(r.config["epsilon"]),
                "master_seed": str(r.config["master_seed"]),
                "mean_acc": _num(r.mean),
                "std_acc": _num(r.std),
            }
            for r in recs
        ]
        _write_csv(path, ("epsilon", "master_seed", "mean_acc", "std_acc"), rows)
        written.append(path)
    return written


def read_results_json(path) -> list[dict]:
    return json.loads(Path(path).read_text())
