"""Fixed-point formats, model quantization and the bit-exact reference inference.

The integer engine in this module is the golden oracle for every generated
netlist: ``simulate(synth_model(q), codes)`` must agree with
:func:`predict_codes` bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model_io import Dataset, MlpBody, SvmBody, TrainedModel, TreeBody


@dataclass(frozen=True)
class FxpFormat:
    total_bits: int
    fraction_bits: int
    signed: bool

    def __post_init__(self):
        if self.total_bits < 1:
            raise ValueError("total_bits must be >= 1")
        if self.fraction_bits < 0:
            raise ValueError("fraction_bits must be >= 0")
        if self.fraction_bits > self.total_bits - (1 if self.signed else 0):
            raise ValueError(f"fraction_bits {self.fraction_bits} too large for {self}")

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def max_code(self) -> int:
        return (1 << (self.total_bits - 1)) - 1 if self.signed else (1 << self.total_bits) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.fraction_bits

    def dequantize(self, code):
        return np.asarray(code, dtype=np.float64) * self.lsb

    def to_dict(self) -> dict:
        return {"total_bits": self.total_bits, "fraction_bits": self.fraction_bits, "signed": self.signed}

    @classmethod
    def from_dict(cls, raw: dict) -> "FxpFormat":
        return cls(int(raw["total_bits"]), int(raw["fraction_bits"]), bool(raw["signed"]))


DEFAULT_INPUT_FORMAT = FxpFormat(4, 4, False)


def quantize_value(x: float, fmt: FxpFormat) -> int:
    """Round-to-nearest-even of ``x * 2**fraction_bits``, saturated to the format."""
    scaled = round(float(x) * (1 << fmt.fraction_bits)) if math.isfinite(x) else (
        fmt.max_code if x > 0 else fmt.min_code
    )
    return int(min(max(scaled, fmt.min_code), fmt.max_code))


def quantize_array(x, fmt: FxpFormat) -> np.ndarray:
    scaled = np.rint(np.asarray(x, dtype=np.float64) * (1 << fmt.fraction_bits))
    return np.clip(scaled, fmt.min_code, fmt.max_code).astype(np.int64)


def signed_width(lo: int, hi: int) -> int:
    """Smallest two's-complement width holding every integer in [lo, hi]."""
    w = 1
    while not (-(1 << (w - 1)) <= lo and hi <= (1 << (w - 1)) - 1):
        w += 1
    return w


# ---------------------------------------------------------------------------
# quantized model


@dataclass(frozen=True)
class InputScaler:
    """Affine map of one raw feature onto ``[0, 1 - lsb]`` of the input format."""

    lo: float
    span: float

    @property
    def degenerate(self) -> bool:
        return self.span <= 0.0


@dataclass(frozen=True)
class QLayer:
    weights: tuple[tuple[int, ...], ...]  # [out][in]
    bias: tuple[int, ...]
    relu: bool
    acc_fraction_bits: int


@dataclass(frozen=True)
class QClassifier:
    weights: tuple[int, ...]
    bias: int
    positive: int
    negative: int


@dataclass(frozen=True)
class QNode:
    id: int
    feature: int = -1
    threshold: int = 0
    left: int = -1
    right: int = -1
    label: int = -1
    bits: int = 0  # comparator precision; 0 means the full input width

    @property
    def is_leaf(self) -> bool:
        return self.label >= 0


@dataclass(frozen=True)
class QuantizedModel:
    kind: str
    input_count: int
    class_count: int
    input_format: FxpFormat
    weight_format: FxpFormat
    scalers: tuple[InputScaler, ...]
    layers: tuple[QLayer, ...] = ()
    classifiers: tuple[QClassifier, ...] = ()
    nodes: tuple[QNode, ...] = ()
    root: int = 0
    flags: tuple[str, ...] = ()
    name: str = ""
    source: Optional[TrainedModel] = field(default=None, compare=False, repr=False)

    @property
    def is_tree(self) -> bool:
        return self.kind == "decision-tree"

    @property
    def output_fraction_bits(self) -> int:
        if self.layers:
            return self.layers[-1].acc_fraction_bits
        return self.input_format.fraction_bits + self.weight_format.fraction_bits

    def neurons(self) -> list[tuple[int, int]]:
        """(layer, row) addresses of every weighted sum; SVM classifiers use layer 0."""
        if self.layers:
            return [(li, r) for li, layer in enumerate(self.layers) for r in range(len(layer.weights))]
        return [(0, r) for r in range(len(self.classifiers))]


@dataclass(frozen=True)
class Prediction:
    label: int
    raw_outputs: tuple[int, ...] = ()


def make_scalers(ranges: Sequence[tuple[float, float]]) -> tuple[InputScaler, ...]:
    return tuple(InputScaler(float(lo), float(hi) - float(lo)) for lo, hi in ranges)


def _input_top(fmt: FxpFormat) -> float:
    # scaled features land in [0, 1 - lsb]; equivalently codes in [0, 2**f - 1]
    return 1.0 - fmt.lsb


def _fold_first_layer(weights: np.ndarray, bias: np.ndarray, scalers, fmt: FxpFormat):
    """Fold the input affine map into a first-layer weight matrix ([out][in])."""
    lo = np.array([s.lo for s in scalers])
    span = np.array([s.span for s in scalers])
    top = _input_top(fmt)
    gain = np.where(span > 0, span / top, 0.0)
    return weights * gain[None, :], bias + weights @ lo


def folded_weights(model: TrainedModel, ranges, input_format: FxpFormat) -> list[np.ndarray]:
    """Real-valued weights as the hardware sees them (input scaling folded in)."""
    scalers = make_scalers(ranges)
    body = model.body
    if isinstance(body, MlpBody):
        out = []
        for i, layer in enumerate(body.layers):
            w = np.array(layer.weights, dtype=np.float64)
            if i == 0:
                w, _ = _fold_first_layer(w, np.array(layer.bias), scalers, input_format)
            out.append(w)
        return out
    if isinstance(body, SvmBody):
        w = np.array([c.weights for c in body.classifiers], dtype=np.float64)
        b = np.array([c.bias for c in body.classifiers])
        return [_fold_first_layer(w, b, scalers, input_format)[0]]
    return []


def fit_weight_format(
    model: TrainedModel, ranges, input_format: FxpFormat = DEFAULT_INPUT_FORMAT, total_bits: int = 8
) -> FxpFormat:
    """Signed format whose fraction bits let the largest folded weight fit without saturation."""
    mats = folded_weights(model, ranges, input_format)
    m = max((float(np.abs(w).max()) for w in mats if w.size), default=0.0)
    max_frac = total_bits - 1
    if m == 0.0:
        return FxpFormat(total_bits, max_frac, True)
    limit = (1 << (total_bits - 1)) - 1
    frac = max_frac
    while frac > 0 and round(m * (1 << frac)) > limit:
        frac -= 1
    return FxpFormat(total_bits, frac, True)


def quantize_threshold(t: float, scaler: InputScaler, fmt: FxpFormat) -> int:
    if scaler.degenerate:
        # every input code is 0 for this feature: keep the branch the raw model takes
        return 0 if scaler.lo >= t else 1
    return quantize_value((t - scaler.lo) / scaler.span * _input_top(fmt), fmt)


def quantize_model(
    model: TrainedModel, input_fmt: FxpFormat, weight_fmt: FxpFormat, train: Dataset
) -> QuantizedModel:
    if len(train) == 0:
        raise ValueError("training data must be nonempty")
    if train.input_count != model.input_count:
        raise ValueError(f"dataset has {train.input_count} features, model expects {model.input_count}")
    scalers = make_scalers(train.feature_ranges)
    flags = tuple(f"degenerate-feature:{i}" for i, s in enumerate(scalers) if s.degenerate)
    common = dict(
        kind=model.kind,
        input_count=model.input_count,
        class_count=model.class_count,
        input_format=input_fmt,
        weight_format=weight_fmt,
        scalers=scalers,
        flags=flags,
        name=model.name,
        source=model,
    )
    fin, fw = input_fmt.fraction_bits, weight_fmt.fraction_bits
    body = model.body
    if isinstance(body, MlpBody):
        layers = []
        frac_in = fin
        for i, layer in enumerate(body.layers):
            w = np.array(layer.weights, dtype=np.float64)
            b = np.array(layer.bias, dtype=np.float64)
            if i == 0:
                w, b = _fold_first_layer(w, b, scalers, input_fmt)
            acc_frac = frac_in + fw
            wq = quantize_array(w, weight_fmt)
            bq = [int(round(v * (1 << acc_frac))) for v in b]
            layers.append(
                QLayer(
                    tuple(tuple(int(v) for v in row) for row in wq),
                    tuple(bq),
                    layer.activation == "relu",
                    acc_frac,
                )
            )
            frac_in = acc_frac
        return QuantizedModel(layers=tuple(layers), **common)
    if isinstance(body, SvmBody):
        w = np.array([c.weights for c in body.classifiers], dtype=np.float64)
        b = np.array([c.bias for c in body.classifiers])
        w, b = _fold_first_layer(w, b, scalers, input_fmt)
        wq = quantize_array(w, weight_fmt)
        acc_frac = fin + fw
        cls = tuple(
            QClassifier(tuple(int(v) for v in wq[i]), int(round(b[i] * (1 << acc_frac))), c.positive, c.negative)
            for i, c in enumerate(body.classifiers)
        )
        return QuantizedModel(classifiers=cls, **common)
    assert isinstance(body, TreeBody)
    nodes = []
    for n in body.nodes:
        if n.is_leaf:
            nodes.append(QNode(id=n.id, label=n.label))
        else:
            t = quantize_threshold(n.threshold, scalers[n.feature], input_fmt)
            nodes.append(QNode(id=n.id, feature=n.feature, threshold=t, left=n.left, right=n.right))
    return QuantizedModel(nodes=tuple(nodes), root=body.root, **common)


# ---------------------------------------------------------------------------
# inference


def quantize_inputs(q: QuantizedModel, x) -> np.ndarray:
    """Raw feature rows -> unsigned input codes, shape (rows, inputs)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != q.input_count:
        raise ValueError(f"rows have {x.shape[1]} features, model expects {q.input_count}")
    lo = np.array([s.lo for s in q.scalers])
    span = np.array([s.span for s in q.scalers])
    safe = np.where(span > 0, span, 1.0)
    u = (x - lo) / safe * _input_top(q.input_format)
    u = np.where(span > 0, u, 0.0)
    return quantize_array(u, q.input_format)


def _acc_dtype(bound: int):
    return np.int64 if bound < (1 << 62) else object


def neuron_bounds(q: QuantizedModel) -> list[list[tuple[int, int]]]:
    """Exact (lo, hi) accumulator range of every neuron (or classifier), per layer."""
    hi_in = [q.input_format.max_code] * q.input_count
    lo_in = [0] * q.input_count
    if q.layers:
        stages = [(list(zip(L.weights, L.bias)), L.relu) for L in q.layers]
    else:
        stages = [([(c.weights, c.bias) for c in q.classifiers], False)]
    out = []
    for rows, relu in stages:
        ranges = []
        for w, b in rows:
            lo = b + sum(min(c * l, c * h) for c, l, h in zip(w, lo_in, hi_in))
            hi = b + sum(max(c * l, c * h) for c, l, h in zip(w, lo_in, hi_in))
            ranges.append((lo, hi))
        out.append(ranges)
        if relu:
            lo_in, hi_in = [max(lo, 0) for lo, _ in ranges], [max(hi, 0) for _, hi in ranges]
        else:
            lo_in, hi_in = [lo for lo, _ in ranges], [hi for _, hi in ranges]
    return out


def layer_bounds(q: QuantizedModel) -> list[tuple[int, int]]:
    return [(min(lo for lo, _ in r), max(hi for _, hi in r)) for r in neuron_bounds(q)]


def _accumulators(q: QuantizedModel, codes: np.ndarray) -> np.ndarray:
    bounds = layer_bounds(q)
    big = max(max(abs(lo), abs(hi)) for lo, hi in bounds)
    dt = _acc_dtype(big)
    a = codes.astype(dt)
    if q.layers:
        for L in q.layers:
            w = np.array(L.weights, dtype=dt)
            a = a @ w.T + np.array(L.bias, dtype=dt)
            if L.relu:
                a = np.where(a > 0, a, 0).astype(dt)
        return a
    w = np.array([c.weights for c in q.classifiers], dtype=dt)
    return a @ w.T + np.array([c.bias for c in q.classifiers], dtype=dt)


def _argmax_lowest(values: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(values, axis=1).astype(np.int64)


def regressor_label(acc, fraction_bits: int, class_count: int):
    acc = np.asarray(acc)
    if fraction_bits > 0:
        r = (acc + (1 << (fraction_bits - 1))) >> fraction_bits
    else:
        r = acc
    return np.clip(r, 0, class_count - 1).astype(np.int64)


def svm_votes(q: QuantizedModel, scores: np.ndarray) -> np.ndarray:
    votes = np.zeros((scores.shape[0], q.class_count), dtype=np.int64)
    for i, c in enumerate(q.classifiers):
        pos = np.asarray(scores[:, i] >= 0)
        votes[:, c.positive] += pos
        votes[:, c.negative] += ~pos
    return votes


@dataclass(frozen=True)
class TreeArrays:
    """Index-addressed tree for vectorized evaluation."""

    feature: np.ndarray
    threshold: np.ndarray
    shift: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray
    root: int
    internal: np.ndarray  # positions of internal nodes, in node order


def tree_arrays(q: QuantizedModel) -> TreeArrays:
    pos = {n.id: i for i, n in enumerate(q.nodes)}
    full = q.input_format.total_bits
    n = len(q.nodes)
    feature = np.zeros(n, dtype=np.int64)
    thr = np.zeros(n, dtype=np.int64)
    shift = np.zeros(n, dtype=np.int64)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    label = np.full(n, -1, dtype=np.int64)
    for i, nd in enumerate(q.nodes):
        if nd.is_leaf:
            label[i] = nd.label
            left[i] = right[i] = i
        else:
            feature[i] = nd.feature
            bits = nd.bits or full
            shift[i] = full - bits
            thr[i] = nd.threshold >> shift[i]
            left[i] = pos[nd.left]
            right[i] = pos[nd.right]
    internal = np.array([i for i, nd in enumerate(q.nodes) if not nd.is_leaf], dtype=np.int64)
    return TreeArrays(feature, thr, shift, left, right, label, pos[q.root], internal)


def tree_predict(t: TreeArrays, codes: np.ndarray) -> np.ndarray:
    """Right branch iff the (truncated) input code >= the (truncated) threshold."""
    rows = np.arange(codes.shape[0])
    cur = np.full(codes.shape[0], t.root, dtype=np.int64)
    while True:
        active = t.label[cur] < 0
        if not active.any():
            return t.label[cur]
        f = t.feature[cur]
        x = codes[rows, f] >> t.shift[cur]
        go_right = x >= t.threshold[cur]
        nxt = np.where(go_right, t.right[cur], t.left[cur])
        cur = np.where(active, nxt, cur)


def predict_codes(q: QuantizedModel, codes) -> tuple[np.ndarray, np.ndarray]:
    """Labels and raw accumulator outputs for a batch of input codes."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if q.is_tree:
        return tree_predict(tree_arrays(q), codes), np.zeros((codes.shape[0], 0), dtype=np.int64)
    acc = _accumulators(q, codes)
    if q.kind == "mlp-regressor":
        return regressor_label(acc[:, 0], q.output_fraction_bits, q.class_count), acc
    if q.kind == "svm-classifier":
        return _argmax_lowest(svm_votes(q, acc)), acc
    return _argmax_lowest(acc), acc


def infer(q: QuantizedModel, row) -> Prediction:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (q.input_count,):
        raise ValueError(f"row length {row.shape} != {q.input_count}")
    labels, raw = predict_codes(q, quantize_inputs(q, row[None, :]))
    return Prediction(int(labels[0]), tuple(int(v) for v in raw[0]))


def predict(q: QuantizedModel, x) -> np.ndarray:
    return predict_codes(q, quantize_inputs(q, x))[0]


def accuracy(q: QuantizedModel, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(q, data.features) == data.labels))


# ---------------------------------------------------------------------------
# floating-point reference


def float_predict(model: TrainedModel, x) -> np.ndarray:
    """Real-valued inference of the source model on raw features, same decision rules."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    body = model.body
    if isinstance(body, MlpBody):
        a = x
        for layer in body.layers:
            a = a @ np.array(layer.weights).T + np.array(layer.bias)
            if layer.activation == "relu":
                a = np.maximum(a, 0.0)
        if model.kind == "mlp-regressor":
            return np.clip(np.floor(a[:, 0] + 0.5), 0, model.class_count - 1).astype(np.int64)
        return np.argmax(a, axis=1).astype(np.int64)
    if isinstance(body, SvmBody):
        w = np.array([c.weights for c in body.classifiers])
        b = np.array([c.bias for c in body.classifiers])
        scores = x @ w.T + b
        votes = np.zeros((x.shape[0], model.class_count), dtype=np.int64)
        for i, c in enumerate(body.classifiers):
            pos = scores[:, i] >= 0
            votes[:, c.positive] += pos
            votes[:, c.negative] += ~pos
        return np.argmax(votes, axis=1).astype(np.int64)
    out = np.empty(x.shape[0], dtype=np.int64)
    for r in range(x.shape[0]):
        n = body.node(body.root)
        while not n.is_leaf:
            n = body.node(n.right if x[r, n.feature] >= n.threshold else n.left)
        out[r] = n.label
    return out


def float_accuracy(model: TrainedModel, data: Dataset) -> float:
    return float(np.mean(float_predict(model, data.features) == data.labels))


# ---------------------------------------------------------------------------
# serialization of quantized models


def qmodel_to_dict(q: QuantizedModel) -> dict:
    out = {
        "kind": q.kind,
        "name": q.name,
        "inputs": q.input_count,
        "classes": q.class_count,
        "input_format": q.input_format.to_dict(),
        "weight_format": q.weight_format.to_dict(),
        "scalers": [[s.lo, s.span] for s in q.scalers],
        "flags": list(q.flags),
    }
    if q.layers:
        out["layers"] = [
            {"weights": [list(r) for r in L.weights], "bias": list(L.bias), "relu": L.relu,
             "acc_fraction_bits": L.acc_fraction_bits}
            for L in q.layers
        ]
    if q.classifiers:
        out["classifiers"] = [
            {"weights": list(c.weights), "bias": c.bias, "positive": c.positive, "negative": c.negative}
            for c in q.classifiers
        ]
    if q.nodes:
        out["root"] = q.root
        out["nodes"] = [
            {"id": n.id, "class": n.label} if n.is_leaf else
            {"id": n.id, "feature": n.feature, "threshold": n.threshold, "left": n.left, "right": n.right,
             "bits": n.bits or q.input_format.total_bits}
            for n in q.nodes
        ]
    return out


def qmodel_from_dict(raw: dict) -> QuantizedModel:
    layers = tuple(
        QLayer(tuple(tuple(r) for r in L["weights"]), tuple(L["bias"]), bool(L["relu"]), int(L["acc_fraction_bits"]))
        for L in raw.get("layers", [])
    )
    classifiers = tuple(
        QClassifier(tuple(c["weights"]), int(c["bias"]), int(c["positive"]), int(c["negative"]))
        for c in raw.get("classifiers", [])
    )
    in_fmt = FxpFormat.from_dict(raw["input_format"])
    nodes = tuple(
        QNode(id=n["id"], label=n["class"]) if "class" in n else
        QNode(id=n["id"], feature=n["feature"], threshold=n["threshold"], left=n["left"], right=n["right"],
              bits=0 if n.get("bits", in_fmt.total_bits) == in_fmt.total_bits else n["bits"])
        for n in raw.get("nodes", [])
    )
    return QuantizedModel(
        kind=raw["kind"],
        input_count=int(raw["inputs"]),
        class_count=int(raw["classes"]),
        input_format=in_fmt,
        weight_format=FxpFormat.from_dict(raw["weight_format"]),
        scalers=tuple(InputScaler(float(lo), float(sp)) for lo, sp in raw["scalers"]),
        layers=layers,
        classifiers=classifiers,
        nodes=nodes,
        root=int(raw.get("root", 0)),
        flags=tuple(raw.get("flags", [])),
        name=raw.get("name", ""),
    )


def with_tree_config(q: QuantizedModel, thresholds: Sequence[int], bits: Sequence[int]) -> QuantizedModel:
    """Replace thresholds and comparator precisions of the internal nodes (node order)."""
    it = iter(zip(thresholds, bits))
    full = q.input_format.total_bits
    nodes = []
    for n in q.nodes:
        if n.is_leaf:
            nodes.append(n)
            continue
        t, b = next(it)
        nodes.append(replace(n, threshold=int(t), bits=0 if int(b) == full else int(b)))
    return replace(q, nodes=tuple(nodes))
