"""Loading and validating trained models and datasets.

Models are declarative coefficient dumps (JSON). Coefficients are defined over
the *raw* feature space; the fixed-point layer folds the per-feature input
scaling in at quantization time.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Union

import numpy as np

MODEL_KINDS = ("mlp-classifier", "mlp-regressor", "svm-classifier", "decision-tree")
ACTIVATIONS = ("relu", "none")

PathLike = Union[str, Path]


class ModelFormatError(ValueError):
    """A model file violates the schema; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DenseLayer:
    weights: tuple[tuple[float, ...], ...]  # [out][in]
    bias: tuple[float, ...]
    activation: str = "relu"

    @property
    def in_width(self) -> int:
        return len(self.weights[0]) if self.weights else 0

    @property
    def out_width(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class MlpBody:
    layers: tuple[DenseLayer, ...]


@dataclass(frozen=True)
class BinaryClassifier:
    weights: tuple[float, ...]
    bias: float
    positive: int
    negative: int


@dataclass(frozen=True)
class SvmBody:
    classifiers: tuple[BinaryClassifier, ...]


@dataclass(frozen=True)
class TreeNode:
    id: int
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    label: int = -1  # leaf class, -1 for internal nodes

    @property
    def is_leaf(self) -> bool:
        return self.label >= 0


@dataclass(frozen=True)
class TreeBody:
    nodes: tuple[TreeNode, ...]
    root: int

    def node(self, node_id: int) -> TreeNode:
        return self._index[node_id]

    @cached_property
    def _index(self) -> dict[int, TreeNode]:
        return {n.id: n for n in self.nodes}

    def internal_nodes(self) -> list[TreeNode]:
        return [n for n in self.nodes if not n.is_leaf]


Body = Union[MlpBody, SvmBody, TreeBody]


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    input_count: int
    class_count: int
    body: Body
    name: str = ""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (rows, inputs) float64
    labels: np.ndarray  # (rows,) int64
    feature_ranges: tuple[tuple[float, float], ...]
    flags: tuple[str, ...] = ()

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_count(self) -> int:
        return int(self.features.shape[1])


# ---------------------------------------------------------------------------
# models


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelFormatError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ModelFormatError(path, "non-finite number")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ModelFormatError(path, f"expected an integer, got {value!r}")
    return value


def _list(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise ModelFormatError(path, "expected a list")
    return value


def _parse_mlp(raw: Any, inputs: int, classes: int, kind: str) -> MlpBody:
    if not isinstance(raw, dict):
        raise ModelFormatError("mlp", "expected an object")
    layers_raw = _list(raw.get("layers"), "mlp.layers")
    if not layers_raw:
        raise ModelFormatError("mlp.layers", "at least one layer required")
    layers = []
    width = inputs
    for i, lr in enumerate(layers_raw):
        p = f"mlp.layers[{i}]"
        if not isinstance(lr, dict):
            raise ModelFormatError(p, "expected an object")
        rows = _list(lr.get("weights"), p + ".weights")
        bias = _list(lr.get("bias"), p + ".bias")
        act = lr.get("activation", "relu" if i < len(layers_raw) - 1 else "none")
        if act not in ACTIVATIONS:
            raise ModelFormatError(p + ".activation", f"unknown activation {act!r}")
        weights = []
        for r, row in enumerate(rows):
            row = _list(row, f"{p}.weights[{r}]")
            if len(row) != width:
                raise ModelFormatError(
                    f"{p}.weights[{r}]",
                    f"layer {i} expects input width {width}, row has {len(row)}",
                )
            weights.append(tuple(_number(v, f"{p}.weights[{r}][{c}]") for c, v in enumerate(row)))
        if not weights:
            raise ModelFormatError(p + ".weights", f"layer {i} has no output rows")
        if len(bias) != len(weights):
            raise ModelFormatError(
                p + ".bias", f"layer {i} bias length {len(bias)} != output width {len(weights)}"
            )
        layers.append(
            DenseLayer(
                tuple(weights), tuple(_number(v, f"{p}.bias[{j}]") for j, v in enumerate(bias)), act
            )
        )
        width = len(weights)
    expected = 1 if kind == "mlp-regressor" else classes
    if width != expected:
        raise ModelFormatError(
            f"mlp.layers[{len(layers) - 1}].weights",
            f"final output width {width} != {expected}",
        )
    return MlpBody(tuple(layers))


def _parse_svm(raw: Any, inputs: int, classes: int) -> SvmBody:
    if not isinstance(raw, dict):
        raise ModelFormatError("svm", "expected an object")
    items = _list(raw.get("classifiers"), "svm.classifiers")
    expected = classes * (classes - 1) // 2
    if len(items) != expected:
        raise ModelFormatError(
            "svm.classifiers", f"{classes} classes need {expected} binary classifiers, got {len(items)}"
        )
    out = []
    seen = set()
    for i, it in enumerate(items):
        p = f"svm.classifiers[{i}]"
        if not isinstance(it, dict):
            raise ModelFormatError(p, "expected an object")
        w = _list(it.get("weights"), p + ".weights")
        if len(w) != inputs:
            raise ModelFormatError(p + ".weights", f"expected {inputs} weights, got {len(w)}")
        pos = _integer(it.get("positive"), p + ".positive")
        neg = _integer(it.get("negative"), p + ".negative")
        for name, c in (("positive", pos), ("negative", neg)):
            if not 0 <= c < classes:
                raise ModelFormatError(f"{p}.{name}", f"class {c} out of range")
        pair = frozenset((pos, neg))
        if pos == neg or pair in seen:
            raise ModelFormatError(p, f"class pair ({pos},{neg}) repeated or degenerate")
        seen.add(pair)
        out.append(
            BinaryClassifier(
                tuple(_number(v, f"{p}.weights[{j}]") for j, v in enumerate(w)),
                _number(it.get("bias"), p + ".bias"),
                pos,
                neg,
            )
        )
    return SvmBody(tuple(out))


def _parse_tree(raw: Any, inputs: int, classes: int) -> TreeBody:
    if not isinstance(raw, dict):
        raise ModelFormatError("tree", "expected an object")
    items = _list(raw.get("nodes"), "tree.nodes")
    if not items:
        raise ModelFormatError("tree.nodes", "empty tree")
    nodes: dict[int, TreeNode] = {}
    order = []
    for i, it in enumerate(items):
        p = f"tree.nodes[{i}]"
        if not isinstance(it, dict):
            raise ModelFormatError(p, "expected an object")
        nid = _integer(it.get("id"), p + ".id")
        if nid in nodes:
            raise ModelFormatError(p + ".id", f"duplicate node id {nid}")
        if "class" in it:
            label = _integer(it["class"], p + ".class")
            if not 0 <= label < classes:
                raise ModelFormatError(p + ".class", f"leaf class {label} >= class count {classes}")
            node = TreeNode(id=nid, label=label)
        else:
            feat = _integer(it.get("feature"), p + ".feature")
            if not 0 <= feat < inputs:
                raise ModelFormatError(p + ".feature", f"feature {feat} out of range")
            node = TreeNode(
                id=nid,
                feature=feat,
                threshold=_number(it.get("threshold"), p + ".threshold"),
                left=_integer(it.get("left"), p + ".left"),
                right=_integer(it.get("right"), p + ".right"),
            )
        nodes[nid] = node
        order.append(node)

    parents: dict[int, int] = {}
    for i, node in enumerate(order):
        if node.is_leaf:
            continue
        for side in ("left", "right"):
            child = getattr(node, side)
            if child not in nodes:
                raise ModelFormatError(f"tree.nodes[{i}].{side}", f"dangling child id {child}")
            if child in parents or child == node.id:
                raise ModelFormatError(f"tree.nodes[{i}].{side}", f"node {child} has multiple parents")
            parents[child] = node.id
    roots = [n.id for n in order if n.id not in parents]
    if len(roots) != 1:
        raise ModelFormatError("tree.nodes", f"expected a single root, found {roots}")
    root = roots[0]
    if "root" in raw and raw["root"] != root:
        raise ModelFormatError("tree.root", f"declared root {raw['root']} is not the tree root {root}")
    # reachability also rules out cycles detached from the root
    seen = set()
    stack = [root]
    while stack:
        nid = stack.pop()
        seen.add(nid)
        n = nodes[nid]
        if not n.is_leaf:
            stack.extend((n.left, n.right))
    if len(seen) != len(nodes):
        missing = sorted(set(nodes) - seen)
        raise ModelFormatError("tree.nodes", f"nodes unreachable from root: {missing}")
    return TreeBody(tuple(order), root)


def model_from_dict(raw: Any, name: str = "") -> TrainedModel:
    if not isinstance(raw, dict):
        raise ModelFormatError("$", "expected a JSON object")
    kind = raw.get("kind")
    if kind not in MODEL_KINDS:
        raise ModelFormatError("kind", f"unknown model kind {kind!r}")
    inputs = _integer(raw.get("inputs"), "inputs")
    classes = _integer(raw.get("classes"), "classes")
    if inputs < 1:
        raise ModelFormatError("inputs", "must be positive")
    if classes < 2:
        raise ModelFormatError("classes", "must be >= 2")
    body_key = {"mlp-classifier": "mlp", "mlp-regressor": "mlp", "svm-classifier": "svm", "decision-tree": "tree"}[
        kind
    ]
    present = [k for k in ("mlp", "svm", "tree") if k in raw]
    if present != [body_key]:
        raise ModelFormatError(body_key, f"kind {kind!r} requires exactly one '{body_key}' body, found {present}")
    if body_key == "mlp":
        body: Body = _parse_mlp(raw["mlp"], inputs, classes, kind)
    elif body_key == "svm":
        body = _parse_svm(raw["svm"], inputs, classes)
    else:
        body = _parse_tree(raw["tree"], inputs, classes)
    return TrainedModel(kind, inputs, classes, body, name=str(raw.get("name", name)))


def model_to_dict(model: TrainedModel) -> dict:
    out: dict[str, Any] = {"kind": model.kind, "inputs": model.input_count, "classes": model.class_count}
    if model.name:
        out["name"] = model.name
    body = model.body
    if isinstance(body, MlpBody):
        out["mlp"] = {
            "layers": [
                {"weights": [list(r) for r in layer.weights], "bias": list(layer.bias), "activation": layer.activation}
                for layer in body.layers
            ]
        }
    elif isinstance(body, SvmBody):
        out["svm"] = {
            "classifiers": [
                {"weights": list(c.weights), "bias": c.bias, "positive": c.positive, "negative": c.negative}
                for c in body.classifiers
            ]
        }
    else:
        nodes = []
        for n in body.nodes:
            if n.is_leaf:
                nodes.append({"id": n.id, "class": n.label})
            else:
                nodes.append({"id": n.id, "feature": n.feature, "threshold": n.threshold, "left": n.left, "right": n.right})
        out["tree"] = {"nodes": nodes}
    return out


def load_model(path: PathLike) -> TrainedModel:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError("$", f"JSON parse failure: {exc}") from exc
    return model_from_dict(raw, name=path.stem)


def save_model(model: TrainedModel, path: PathLike) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# datasets


def make_dataset(features, labels, feature_ranges=None) -> Dataset:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DatasetFormatError("features must be (rows, inputs) and labels (rows,)")
    if feature_ranges is None:
        feature_ranges = tuple((float(lo), float(hi)) for lo, hi in zip(x.min(axis=0), x.max(axis=0)))
    x.setflags(write=False)
    y.setflags(write=False)
    return Dataset(x, y, tuple(feature_ranges))


def load_dataset(path: PathLike, expected_inputs: int, expected_classes: int) -> Dataset:
    """Read a CSV with a header row: feature columns then an integer label."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if len(header) != expected_inputs + 1:
            raise DatasetFormatError(
                f"{path}: header has {len(header)} columns, expected {expected_inputs + 1}"
            )
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != expected_inputs + 1:
                raise DatasetFormatError(f"{path}:{lineno}: {len(rec)} columns, expected {expected_inputs + 1}")
            try:
                rows.append([float(c) for c in rec[:-1]])
                label_f = float(rec[-1])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if not all(math.isfinite(v) for v in rows[-1]):
                raise DatasetFormatError(f"{path}:{lineno}: non-finite feature value")
            if label_f != int(label_f):
                raise DatasetFormatError(f"{path}:{lineno}: label {rec[-1]!r} is not an integer")
            label = int(label_f)
            if not 0 <= label < expected_classes:
                raise DatasetFormatError(
                    f"{path}:{lineno}: label {label} out of range (valid 0..{expected_classes - 1})"
                )
            labels.append(label)
    if len(rows) < 2:
        raise DatasetFormatError(f"{path}: at least 2 rows required, got {len(rows)}")
    return make_dataset(rows, labels)


def save_dataset(data: Dataset, path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(data.input_count)] + ["label"])
        for row, label in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def subset(data: Dataset, index) -> Dataset:
    idx = np.asarray(index, dtype=np.int64)
    x = data.features[idx]
    y = data.labels[idx]
    x.setflags(write=False)
    y.setflags(write=False)
    return replace(data, features=x, labels=y)


def _allocate(counts: dict[int, int], fraction: float, total: int) -> dict[int, int]:
    # largest-remainder apportionment so per-class counts sum to the global test size
    exact = {c: fraction * n for c, n in counts.items()}
    alloc = {c: int(math.floor(v)) for c, v in exact.items()}
    spare = total - sum(alloc.values())
    by_remainder = sorted(counts, key=lambda c: (-(exact[c] - alloc[c]), c))
    for c in by_remainder:
        if spare <= 0:
            break
        if alloc[c] < counts[c] - 1:
            alloc[c] += 1
            spare -= 1
    return alloc


def split(data: Dataset, test_fraction: float, seed: int, stratify: bool = True) -> tuple[Dataset, Dataset]:
    """Deterministic (train, test) partition; both keep the parent's feature ranges.

    Rows keep their original relative order inside each partition.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(data)
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test > n - 1:
        raise ValueError(f"split of {n} rows at {test_fraction} leaves an empty partition")
    rng = np.random.default_rng(seed)
    labels = data.labels
    classes, counts = np.unique(labels, return_counts=True)
    flags: tuple[str, ...] = ()
    if stratify and counts.min() >= 2:
        alloc = _allocate({int(c): int(k) for c, k in zip(classes, counts)}, test_fraction, n_test)
        test_idx = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            test_idx.extend(rng.permutation(members)[: alloc[int(c)]].tolist())
        test_idx = np.array(sorted(test_idx), dtype=np.int64)
    else:
        if stratify:
            warnings.warn("a class has fewer than 2 rows; falling back to an unstratified split", stacklevel=2)
            flags = ("unstratified-split",)
        test_idx = np.sort(rng.permutation(n)[:n_test])
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    train = subset(data, np.flatnonzero(~mask))
    test = subset(data, test_idx)
    return replace(train, flags=data.flags + flags), replace(test, flags=data.flags + flags)
