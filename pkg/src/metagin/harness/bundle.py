"""Dataset bundle directories and parameter checkpoints on disk.

Bundle layout::

    graph.edges    src<TAB>dst per line, 0-based ids, undirected
    features.csv   node_id,f0,...,f{d-1}
    labels.csv     node_id,class_id
    splits.json    {"train_classes": [...], "val_classes": [...], "test_classes": [...]}
    meta.json      name, counts and a checksum of the four files (optional on read)
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError, GraphError
from ..graph import AttributedGraph, ClassSplits, build_graph
from ..numerics import PARAM_NAMES, ParamSet

EDGES_FILE = "graph.edges"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"
SPLITS_FILE = "splits.json"
META_FILE = "meta.json"
DATA_FILES = (EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE)


@dataclass(eq=False)
class DatasetBundle:
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    splits: ClassSplits
    name: str = "dataset"
    extra: dict = field(default_factory=dict)

    def to_graph(self) -> AttributedGraph:
        return build_graph(self.edges.tolist(), self.features, self.labels, self.splits)

    def write(self, directory) -> Path:
        return write_bundle(self, directory)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_bundle(bundle: DatasetBundle, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    edges = np.asarray(bundle.edges, dtype=np.int64).reshape(-1, 2)
    with open(out / EDGES_FILE, "w", newline="\n") as fh:
        for s, t in edges.tolist():
            fh.write(f"{s}\t{t}\n")
    n, d = bundle.features.shape
    with open(out / FEATURES_FILE, "w", newline="\n") as fh:
        fh.write(",".join(["node_id"] + [f"f{j}" for j in range(d)]) + "\n")
        for i, row in enumerate(bundle.features.tolist()):
            fh.write(",".join([str(i)] + [_fmt(v) for v in row]) + "\n")
    with open(out / LABELS_FILE, "w", newline="\n") as fh:
        fh.write("node_id,class_id\n")
        for i, y in enumerate(np.asarray(bundle.labels).tolist()):
            fh.write(f"{i},{y}\n")
    splits = {
        "train_classes": list(bundle.splits.train),
        "val_classes": list(bundle.splits.val),
        "test_classes": list(bundle.splits.test),
    }
    (out / SPLITS_FILE).write_text(json.dumps(splits) + "\n")
    meta = {
        "name": bundle.name,
        "num_nodes": int(n),
        "num_edges": int(edges.shape[0]),
        "num_features": int(d),
        "num_classes": len(splits["train_classes"]) + len(splits["val_classes"]) + len(splits["test_classes"]),
        "checksum": bundle_checksum(out),
        **bundle.extra,
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def bundle_checksum(directory) -> str:
    h = hashlib.sha256()
    for name in DATA_FILES:
        h.update(name.encode())
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()


def _require(path: Path) -> Path:
    if not path.is_file():
        raise DataError(f"missing file {path}")
    return path


def _read_edges(path: Path) -> list[tuple[int, int]]:
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise DataError(f"{path.name}:{lineno}: expected 'src<TAB>dst', got {line!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: non-integer node id in {line!r}") from None
    return edges


def _read_table(path: Path, kind) -> tuple[list[str], dict[int, list]]:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: empty file") from None
        if not header or header[0].strip() != "node_id":
            raise DataError(f"{path.name}:1: header must start with 'node_id'")
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path.name}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                node = int(row[0])
                values = [kind(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: malformed value in row {row!r}") from None
            if node in rows:
                raise DataError(f"{path.name}:{lineno}: duplicate node_id {node}")
            rows[node] = values
    return header, rows


def _dense(rows: dict[int, list], path: Path) -> list[list]:
    n = len(rows)
    if set(rows) != set(range(n)):
        raise DataError(f"{path.name}: node ids must be exactly 0..{n - 1}")
    return [rows[i] for i in range(n)]


def load_dataset(directory) -> AttributedGraph:
    """Read a bundle directory into a validated graph."""
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    edges = _read_edges(_require(root / EDGES_FILE))
    feat_path, label_path = _require(root / FEATURES_FILE), _require(root / LABELS_FILE)
    _, feat_rows = _read_table(feat_path, float)
    _, label_rows = _read_table(label_path, int)
    features = np.asarray(_dense(feat_rows, feat_path), dtype=np.float64)
    labels = np.asarray([r[0] for r in _dense(label_rows, label_path)], dtype=np.int64)
    if features.shape[0] != labels.shape[0]:
        raise DataError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
    try:
        splits = json.loads(_require(root / SPLITS_FILE).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{SPLITS_FILE}: {exc}") from None
    if not isinstance(splits, dict) or not {"train_classes", "val_classes", "test_classes"} <= set(splits):
        raise DataError(f"{SPLITS_FILE} must hold train_classes, val_classes and test_classes")
    try:
        graph = build_graph(edges, features, labels, splits)
    except GraphError as exc:
        raise DataError(f"integrity error in {root}: {exc}") from exc
    meta_path = root / META_FILE
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        if "num_nodes" in meta and meta["num_nodes"] != graph.num_nodes:
            raise DataError(f"meta.json says {meta['num_nodes']} nodes, files hold {graph.num_nodes}")
    return graph


def load_labels(path, num_nodes: int | None = None) -> np.ndarray:
    """Read a ``node_id,class_id[,...]`` label file (extra columns ignored)."""
    path = _require(Path(path))
    _, rows = _read_table(path, int)
    labels = np.asarray([r[0] for r in _dense(rows, path)], dtype=np.int64)
    if num_nodes is not None and labels.size != num_nodes:
        raise DataError(f"{path.name} has {labels.size} labels for {num_nodes} nodes")
    return labels


def write_labels(path, labels, original=None) -> None:
    with open(path, "w", newline="\n") as fh:
        if original is None:
            fh.write("node_id,class_id\n")
            for i, y in enumerate(np.asarray(labels).tolist()):
                fh.write(f"{i},{y}\n")
        else:
            fh.write("node_id,class_id,flipped\n")
            for i, (y, y0) in enumerate(zip(np.asarray(labels).tolist(), np.asarray(original).tolist())):
                fh.write(f"{i},{y},{int(y != y0)}\n")


def params_to_json(params: ParamSet, metadata: dict | None = None) -> str:
    arrays = {
        name: {"shape": list(t.shape), "data": [_fmt(v) for v in t.detach().reshape(-1).tolist()]}
        for name, t in params.items()
    }
    doc = {"format": "metagin-params/1", "arrays": arrays}
    if metadata:
        doc["metadata"] = metadata
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_params(params: ParamSet, path, metadata: dict | None = None) -> None:
    Path(path).write_text(params_to_json(params, metadata))


def load_params(path) -> tuple[ParamSet, dict]:
    try:
        doc = json.loads(Path(path).read_text())
        arrays = doc["arrays"]
        tensors = []
        for name in PARAM_NAMES:
            entry = arrays[name]
            values = np.asarray([float(v) for v in entry["data"]], dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise ValueError(f"array {name} holds non-finite values")
            tensors.append(torch.as_tensor(values.reshape(entry["shape"])))
        params = ParamSet(*tensors)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read parameters from {path}: {exc}") from exc
    return params, doc.get("metadata", {})
