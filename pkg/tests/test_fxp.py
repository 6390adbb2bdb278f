import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bespoke_axc.fxp import (
    FxpFormat,
    accuracy,
    fit_weight_format,
    float_accuracy,
    infer,
    predict_codes,
    qmodel_from_dict,
    qmodel_to_dict,
    quantize_inputs,
    quantize_model,
    quantize_value,
)
from bespoke_axc.model_io import make_dataset, model_from_dict

from conftest import SUMS, fixture


def nearest_code(x: float, fmt: FxpFormat) -> int:
    """Brute force over every code; ties go to the even code."""
    best = None
    for c in range(fmt.min_code, fmt.max_code + 1):
        d = abs(c / (1 << fmt.fraction_bits) - x)
        key = (d, c % 2)
        if best is None or key < best[0]:
            best = (key, c)
    return best[1]


def test_quantize_examples():
    s87 = FxpFormat(8, 7, True)
    assert quantize_value(0.5, s87) == 64
    assert quantize_value(1.0, s87) == 127
    assert quantize_value(0.3, FxpFormat(4, 4, False)) == 5 == nearest_code(0.3, FxpFormat(4, 4, False))


def test_format_validation():
    with pytest.raises(ValueError):
        FxpFormat(8, 8, True)
    with pytest.raises(ValueError):
        FxpFormat(0, 0, False)
    assert FxpFormat(4, 4, False).max_code == 15
    assert FxpFormat(8, 7, True).min_code == -128


formats = st.builds(
    lambda total, signed, frac: FxpFormat(total, min(frac, total - int(signed)), signed),
    st.integers(1, 8), st.booleans(), st.integers(0, 8),
).filter(lambda f: f.total_bits > int(f.signed))


@settings(max_examples=300, deadline=None)
@given(fmt=formats, x=st.floats(-300, 300, allow_nan=False))
def test_quantize_matches_brute_force(fmt, x):
    code = quantize_value(x, fmt)
    assert code == nearest_code(x, fmt)
    lsb = 2.0 ** -fmt.fraction_bits
    clamped = min(max(x, fmt.min_code * lsb), fmt.max_code * lsb)
    assert abs(code * lsb - clamped) <= lsb / 2 + 1e-12


def test_quantize_grid_sweep():
    fmt = FxpFormat(6, 3, True)
    for x in np.linspace(-5, 5, 4001):
        assert quantize_value(float(x), fmt) == nearest_code(float(x), fmt)


def _identity_data(n_inputs=1, frac=4):
    top = 1 - 2.0 ** -frac
    return make_dataset(np.zeros((2, n_inputs)), [0, 1], [(0.0, top)] * n_inputs)


def test_identity_weight_under_8_6():
    m = model_from_dict({"kind": "mlp-regressor", "inputs": 1, "classes": 2,
                         "mlp": {"layers": [{"weights": [[1.0]], "bias": [0.0], "activation": "none"}]}})
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 6, True), _identity_data())
    assert q.layers[0].weights == ((64,),)
    assert q.layers[0].acc_fraction_bits == 4 + 6


def test_identity_datapath():
    m = model_from_dict({"kind": "mlp-regressor", "inputs": 1, "classes": 2,
                         "mlp": {"layers": [{"weights": [[1.0]], "bias": [0.0], "activation": "none"}]}})
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 0, True), _identity_data())
    assert q.layers[0].weights == ((1,),)
    labels, raw = predict_codes(q, [[5]])
    assert raw[0].tolist() == [5] and labels[0] == 0
    p = infer(q, [5 / 16])
    assert p.label == 0 and p.raw_outputs == (5,)


def test_one_leaf_tree():
    m = model_from_dict({"kind": "decision-tree", "inputs": 2, "classes": 3, "tree": {"nodes": [{"id": 0, "class": 1}]}})
    q = quantize_model(m, FxpFormat(8, 8, False), FxpFormat(8, 7, True), _identity_data(2, 8))
    assert infer(q, [0.3, 0.9]).label == 1
    assert infer(q, [0.3, 0.9]).raw_outputs == ()


def test_tree_threshold_at_max_saturates():
    m = model_from_dict({"kind": "decision-tree", "inputs": 1, "classes": 2, "tree": {"nodes": [
        {"id": 0, "feature": 0, "threshold": 10.0, "left": 1, "right": 2}, {"id": 1, "class": 0}, {"id": 2, "class": 1}]}})
    data = make_dataset([[0.0], [10.0]], [0, 1])
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 7, True), data)
    assert q.nodes[0].threshold == 15
    assert accuracy(q, data) == 1.0


def test_svm_three_way_tie_goes_to_lowest():
    # (0,1): 0 wins, (0,2): 2 wins, (1,2): 1 wins -> one vote each
    cls = [
        {"weights": [0.0], "bias": 1.0, "positive": 0, "negative": 1},
        {"weights": [0.0], "bias": -1.0, "positive": 0, "negative": 2},
        {"weights": [0.0], "bias": 1.0, "positive": 1, "negative": 2},
    ]
    m = model_from_dict({"kind": "svm-classifier", "inputs": 1, "classes": 3, "svm": {"classifiers": cls}})
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 6, True), _identity_data())
    assert infer(q, [0.2]).label == 0


def test_svm_zero_score_votes_positive():
    cls = [{"weights": [0.0], "bias": 0.0, "positive": 1, "negative": 0}]
    m = model_from_dict({"kind": "svm-classifier", "inputs": 1, "classes": 2, "svm": {"classifiers": cls}})
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 6, True), _identity_data())
    assert infer(q, [0.5]).label == 1


def test_mlp_argmax_tie_goes_to_lowest():
    m = model_from_dict({"kind": "mlp-classifier", "inputs": 1, "classes": 3, "mlp": {"layers": [
        {"weights": [[0.0], [0.5], [0.5]], "bias": [0.0, 0.0, 0.0], "activation": "none"}]}})
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 6, True), _identity_data())
    assert infer(q, [0.5]).label == 1


def test_accuracy_constant_predictor():
    m = model_from_dict({"kind": "decision-tree", "inputs": 1, "classes": 2, "tree": {"nodes": [{"id": 0, "class": 0}]}})
    data = make_dataset(np.arange(10.0)[:, None], [0] * 6 + [1] * 4)
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 7, True), data)
    assert accuracy(q, data) == pytest.approx(0.6)


def test_memorizing_tree():
    m = model_from_dict({"kind": "decision-tree", "inputs": 1, "classes": 2, "tree": {"nodes": [
        {"id": 0, "feature": 0, "threshold": 1.5, "left": 1, "right": 2}, {"id": 1, "class": 0}, {"id": 2, "class": 1}]}})
    data = make_dataset(np.arange(4.0)[:, None], [0, 0, 1, 1])
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 7, True), data)
    assert accuracy(q, data) == 1.0


def test_degenerate_feature_flagged():
    m = model_from_dict({"kind": "mlp-classifier", "inputs": 2, "classes": 2, "mlp": {"layers": [
        {"weights": [[0.3, 0.2], [-0.1, 0.4]], "bias": [0.0, 0.1], "activation": "none"}]}})
    data = make_dataset([[0.5, 0.0], [0.5, 1.0]], [0, 1])
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 6, True), data)
    assert "degenerate-feature:0" in q.flags
    assert (quantize_inputs(q, [[7.0, 0.3]])[:, 0] == 0).all()


def test_bias_fraction_matches_products():
    _, _, _, q = fixture("cancer_mlp_c")
    assert q.layers[0].acc_fraction_bits == q.input_format.fraction_bits + q.weight_format.fraction_bits
    for L in q.layers:
        for row in L.weights:
            assert all(q.weight_format.min_code <= w <= q.weight_format.max_code for w in row)


def _exact_accumulators(q, codes):
    out = []
    for row in codes.tolist():
        a = [int(v) for v in row]
        if q.layers:
            for L in q.layers:
                a = [sum(w * x for w, x in zip(ws, a)) + b for ws, b in zip(L.weights, L.bias)]
                if L.relu:
                    a = [max(v, 0) for v in a]
        else:
            a = [sum(w * x for w, x in zip(c.weights, a)) + c.bias for c in q.classifiers]
        out.append(a)
    return out


@pytest.mark.parametrize("name", SUMS)
def test_accumulator_exactness(name):
    _, _, _, q = fixture(name)
    codes = np.random.default_rng(5).integers(0, q.input_format.max_code + 1, size=(1000, q.input_count))
    _, raw = predict_codes(q, codes)
    assert raw.tolist() == _exact_accumulators(q, codes)


@pytest.mark.parametrize("name", SUMS)
def test_partition_independent(name):
    _, _, test, q = fixture(name)
    codes = quantize_inputs(q, test.features)
    whole = predict_codes(q, codes)[0]
    parts = np.concatenate([predict_codes(q, c)[0] for c in np.array_split(codes, 7)])
    assert (whole == parts).all()


@pytest.mark.parametrize("name", SUMS)
def test_wider_inputs_not_much_worse(name):
    m, train, test, q4 = fixture(name)
    f8 = FxpFormat(8, 8, False)
    q8 = quantize_model(m, f8, fit_weight_format(m, train.feature_ranges, f8), train)
    assert accuracy(q8, test) >= accuracy(q4, test) - 0.05


@pytest.mark.parametrize("name", SUMS + ["iris_dt"])
def test_qmodel_dict_round_trip(name):
    _, _, test, q = fixture(name)
    again = qmodel_from_dict(qmodel_to_dict(q))
    codes = quantize_inputs(q, test.features)
    assert (predict_codes(again, codes)[0] == predict_codes(q, codes)[0]).all()


def test_float_reference_regressor_rounding():
    m = model_from_dict({"kind": "mlp-regressor", "inputs": 1, "classes": 3,
                         "mlp": {"layers": [{"weights": [[2.0]], "bias": [0.0], "activation": "none"}]}})
    data = make_dataset([[0.25], [0.5], [0.75], [2.0]], [1, 1, 2, 2])
    assert float_accuracy(m, data) == pytest.approx(1.0)
    assert math.isclose(float_accuracy(m, make_dataset([[0.2], [0.3]], [0, 1])), 1.0)
