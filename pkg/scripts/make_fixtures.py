"""Regenerate the bundled fixtures under fixtures/.

Trains small models with scikit-learn (a development-only dependency) on the
UCI datasets that ship with scikit-learn, then dumps them in the tool's model
schema with coefficients expressed over raw features.  Models are trained on
the same deterministic train partition the flow uses.

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn import datasets
from sklearn.neural_network import MLPClassifier, MLPRegressor
from sklearn.svm import SVC
from sklearn.tree import DecisionTreeClassifier

from bespoke_axc.model_io import make_dataset, model_from_dict, save_dataset, split
from bespoke_axc.fxp import float_predict

ROOT = Path(__file__).resolve().parents[1] / "fixtures"
SPLIT_SEED = 2022
TEST_FRACTION = 0.3

LOADERS = {
    "iris": datasets.load_iris,
    "wine": datasets.load_wine,
    "cancer": datasets.load_breast_cancer,
    "digits": datasets.load_digits,
}


def load(name):
    raw = LOADERS[name]()
    return make_dataset(raw.data, raw.target)


def scaled(data, x):
    lo = np.array([r[0] for r in data.feature_ranges])
    span = np.array([r[1] - r[0] for r in data.feature_ranges])
    return (x - lo) / np.where(span > 0, span, 1.0), lo, np.where(span > 0, span, 1.0)


def unscale_dense(w, b, lo, span):
    """Weights [out][in] over min-max scaled inputs -> the same map over raw inputs."""
    w_raw = w / span[None, :]
    b_raw = b - w_raw @ lo
    return w_raw, b_raw


def mlp_dict(clf, data, kind, classes, lo, span):
    layers = []
    for i, (w, b) in enumerate(zip(clf.coefs_, clf.intercepts_)):
        w = w.T.copy()
        if i == 0:
            w, b = unscale_dense(w, b, lo, span)
        last = i == len(clf.coefs_) - 1
        layers.append({"weights": w.tolist(), "bias": list(map(float, b)), "activation": "none" if last else "relu"})
    if kind == "mlp-classifier" and classes == 2 and len(layers[-1]["weights"]) == 1:
        # binary logistic output -> two logits (class 0 fixed at zero)
        top = layers[-1]
        top["weights"] = [[0.0] * len(top["weights"][0])] + top["weights"]
        top["bias"] = [0.0] + top["bias"]
    return {"kind": kind, "inputs": data.input_count, "classes": classes, "mlp": {"layers": layers}}


def svm_dict(clf, data, classes, lo, span, x_tr):
    w = clf.coef_
    b = clf.intercept_
    w_raw, b_raw = unscale_dense(w, b, lo, span)
    pairs = [(i, j) for i in range(classes) for j in range(i + 1, classes)]
    want = clf.predict(scaled(data, x_tr)[0])
    for flip in (False, True):
        items = []
        for k, (i, j) in enumerate(pairs):
            pos, neg = (j, i) if flip else (i, j)
            items.append({"weights": w_raw[k].tolist(), "bias": float(b_raw[k]), "positive": pos, "negative": neg})
        d = {"kind": "svm-classifier", "inputs": data.input_count, "classes": classes, "svm": {"classifiers": items}}
        got = float_predict(model_from_dict(d), x_tr)
        if np.mean(got == want) > 0.99:
            return d
    raise RuntimeError("could not match SVC vote orientation")


def tree_dict(clf, data, classes):
    t = clf.tree_
    nodes = []
    for i in range(t.node_count):
        if t.children_left[i] == -1:
            nodes.append({"id": i, "class": int(np.argmax(t.value[i][0]))})
        else:
            # sklearn goes left on x <= thr; the schema goes right on x >= thr
            thr = float(np.nextafter(t.threshold[i], np.inf))
            nodes.append({"id": i, "feature": int(t.feature[i]), "threshold": thr,
                          "left": int(t.children_left[i]), "right": int(t.children_right[i])})
    return {"kind": "decision-tree", "inputs": data.input_count, "classes": classes, "tree": {"nodes": nodes}}


SPECS = [
    # name, dataset, kind, options
    ("cancer_mlp_c", "cancer", "mlp-classifier", {"hidden": (3,)}),
    ("digits_mlp_c", "digits", "mlp-classifier", {"hidden": (6,)}),
    ("iris_mlp_r", "iris", "mlp-regressor", {"hidden": (3,)}),
    ("cancer_svm_c", "cancer", "svm-classifier", {"C": 0.5}),
    ("wine_svm_c", "wine", "svm-classifier", {"C": 0.5}),
    ("iris_dt", "iris", "decision-tree", {"depth": 4}),
    ("wine_dt", "wine", "decision-tree", {"depth": 4}),
    ("cancer_dt", "cancer", "decision-tree", {"depth": 5}),
]


def build(name, ds, kind, opts):
    data = load(ds)
    classes = int(data.labels.max()) + 1
    train, test = split(data, TEST_FRACTION, SPLIT_SEED)
    x01, lo, span = scaled(data, train.features)
    y = train.labels
    if kind == "mlp-classifier":
        clf = MLPClassifier(hidden_layer_sizes=opts["hidden"], activation="relu", max_iter=4000,
                            alpha=1e-3, random_state=0).fit(x01, y)
        d = mlp_dict(clf, data, kind, classes, lo, span)
    elif kind == "mlp-regressor":
        clf = MLPRegressor(hidden_layer_sizes=opts["hidden"], activation="relu", max_iter=4000,
                           alpha=1e-3, random_state=0).fit(x01, y.astype(float))
        d = mlp_dict(clf, data, kind, classes, lo, span)
    elif kind == "svm-classifier":
        clf = SVC(kernel="linear", C=opts["C"], decision_function_shape="ovo").fit(x01, y)
        d = svm_dict(clf, data, classes, lo, span, train.features)
    else:
        clf = DecisionTreeClassifier(max_depth=opts["depth"], random_state=0).fit(x01, y)
        d = tree_dict(clf, data, classes)
        # thresholds learned on scaled features -> raw space
        for n in d["tree"]["nodes"]:
            if "threshold" in n:
                f = n["feature"]
                n["threshold"] = float(n["threshold"] * span[f] + lo[f])
    d["name"] = name
    model = model_from_dict(d)
    acc_tr = np.mean(float_predict(model, train.features) == train.labels)
    acc_te = np.mean(float_predict(model, test.features) == test.labels)
    print(f"{name:14s} train {acc_tr:.3f} test {acc_te:.3f}")
    return d, data


def main():
    (ROOT / "models").mkdir(parents=True, exist_ok=True)
    (ROOT / "data").mkdir(parents=True, exist_ok=True)
    written = set()
    for name, ds, kind, opts in SPECS:
        d, data = build(name, ds, kind, opts)
        (ROOT / "models" / f"{name}.json").write_text(json.dumps(d, indent=1) + "\n")
        if ds not in written:
            save_dataset(data, ROOT / "data" / f"{ds}.csv")
            written.add(ds)


if __name__ == "__main__":
    main()
