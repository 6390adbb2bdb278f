import itertools
import json
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bespoke_axc.fxp import FxpFormat, predict_codes, quantize_model
from bespoke_axc.model_io import make_dataset, model_from_dict
from bespoke_axc.netlist import (
    GATE_EQUIVALENTS,
    Gate,
    Netlist,
    NetlistBuilder,
    NetlistError,
    area,
    from_json_dict,
    power_proxy,
    profile_activity,
    propagate_constants,
    rebuild,
    simulate,
    to_json_dict,
    to_verilog,
)
from bespoke_axc.synth import comparator_area, model_inputs, synth_comparator, synth_const_mult, synth_model, to_csd

from conftest import MODELS, fixture


@lru_cache(maxsize=None)
def min_signed_digits(c: int) -> int:
    """Fewest nonzero digits of any {-1,0,1} radix-2 form (independent recursion)."""
    if c in (0, 1):
        return c
    if c % 2 == 0:
        return min_signed_digits(c // 2)
    return 1 + min(min_signed_digits((c - 1) // 2), min_signed_digits((c + 1) // 2))


def enumerate_min_nonzeros(c: int, width: int) -> int:
    best = None
    for digits in itertools.product((-1, 0, 1), repeat=width):
        if sum(d << i for i, d in enumerate(digits)) == c:
            nz = sum(1 for d in digits if d)
            best = nz if best is None else min(best, nz)
    return best


def test_csd_examples():
    assert to_csd(0).nonzeros == 0
    f7 = to_csd(7)
    assert f7.nonzeros == 2 == enumerate_min_nonzeros(7, 5)
    assert f7.digits[3] == 1 and f7.digits[0] == -1
    assert to_csd(170).nonzeros == 4 == enumerate_min_nonzeros(170, 9)


def test_csd_exhaustive():
    for c in range(-(1 << 12), (1 << 12) + 1):
        f = to_csd(c)
        assert f.value() == c == sum(d << i for i, d in enumerate(f.digits))
        assert all(not (a and b) for a, b in zip(f.digits, f.digits[1:]))
        assert f.nonzeros == min_signed_digits(abs(c)), c
        assert f.nonzeros <= (abs(c).bit_length() + 2) // 2


def _mult_outputs(n, bits, signed):
    lo, hi = (-(1 << bits - 1), (1 << bits - 1) - 1) if signed else (0, (1 << bits) - 1)
    xs = np.arange(lo, hi + 1)
    return xs, simulate(n, {"x": xs & ((1 << bits) - 1)})["p"]


@pytest.mark.parametrize("c", [0, 1, -1, 7, 8, -8, 9, -37, 85, 127, -128])
@pytest.mark.parametrize("signed", [False, True])
def test_const_mult_exact(c, signed):
    n = synth_const_mult(c, 4, signed)
    xs, p = _mult_outputs(n, 4, signed)
    assert (p == c * xs).all()
    assert n.meta["adder_stages"] == max(to_csd(c).nonzeros - 1, 0)


def test_const_mult_degenerate():
    assert synth_const_mult(0, 4).logic_gate_count() == 0
    assert synth_const_mult(8, 4).meta["adder_stages"] == 0
    assert synth_const_mult(8, 4).logic_gate_count() == 0
    assert simulate(synth_const_mult(7, 4), {"x": [9]})["p"][0] == 63


def test_comparator_examples():
    assert synth_comparator(0, 5).logic_gate_count() == 0
    n = synth_comparator(8, 4)
    assert n.logic_gate_count() == 0
    assert n.outputs["ge"] == n.inputs["x"][3:4]
    n5 = synth_comparator(5, 3)
    xs = np.arange(8)
    assert (simulate(n5, {"x": xs})["ge"] == (xs >= 5)).all()
    with pytest.raises(ValueError):
        synth_comparator(16, 4)


def test_comparator_truncation_never_grows():
    # dropping low bits of both operands never enlarges the comparator
    for t in range(256):
        prev = comparator_area(t, 8)
        for k in range(7, 0, -1):
            cur = comparator_area(t >> (8 - k), k)
            assert cur <= prev
            prev = cur


def test_simulate_basics():
    b = NetlistBuilder()
    b.input("a", 1)
    b.output("y", [b.const(1)])
    n = b.build()
    assert simulate(n, {"a": [0, 1]})["y"].tolist() == [1, 1]

    n = Netlist(1, (Gate("NOT", (0,)),), {"a": (0,)}, {"y": (1,)})
    assert simulate(n, {"a": [0, 1]})["y"].tolist() == [1, 0]
    with pytest.raises((KeyError, ValueError)):
        simulate(n, {})
    with pytest.raises(ValueError):
        simulate(n, {"a": [2]})


def test_netlist_rejects_forward_reference():
    with pytest.raises(NetlistError):
        Netlist(1, (Gate("AND2", (0, 2)), Gate("NOT", (1,))), {"a": (0,)}, {"y": (2,)})


def test_empty_netlist_area_and_power():
    n = Netlist(0, (), {}, {})
    assert area(n).gate_equivalents == 0
    assert power_proxy(area(n), None) == 0


def test_one_leaf_tree_netlist_is_constant():
    m = model_from_dict({"kind": "decision-tree", "inputs": 1, "classes": 4, "tree": {"nodes": [{"id": 0, "class": 2}]}})
    q = quantize_model(m, FxpFormat(8, 8, False), FxpFormat(8, 7, True), make_dataset([[0.0], [1.0]], [0, 1]))
    n = synth_model(q)
    assert n.logic_gate_count() == 0
    assert simulate(n, {"x0": [0, 77, 255]})["label"].tolist() == [2, 2, 2]


def test_unit_weight_mlp_is_wiring():
    m = model_from_dict({"kind": "mlp-regressor", "inputs": 1, "classes": 2,
                         "mlp": {"layers": [{"weights": [[1.0]], "bias": [0.0], "activation": "none"}]}})
    q = quantize_model(m, FxpFormat(4, 4, False), FxpFormat(8, 0, True), make_dataset([[0.0], [15 / 16]], [0, 1]))
    n = synth_model(q)
    assert set(n.inputs["x0"]) <= set(n.outputs["out0"])
    xs = np.arange(16)
    assert (simulate(n, {"x0": xs})["out0"] == xs).all()


@pytest.mark.parametrize("name", MODELS)
def test_model_equivalence(name):
    _, train, _, q = fixture(name)
    codes = np.random.default_rng(1).integers(0, q.input_format.max_code + 1, size=(1000, q.input_count))
    out = simulate(synth_model(q), model_inputs(q, codes))
    labels, raw = predict_codes(q, codes)
    assert (out["label"] == labels).all()
    for k in range(raw.shape[1]):
        assert (out[f"out{k}"] == raw[:, k]).all()


@pytest.mark.parametrize("name", MODELS)
def test_constant_propagation_sound(name):
    _, _, _, q = fixture(name)
    n = synth_model(q)
    codes = np.random.default_rng(2).integers(0, q.input_format.max_code + 1, size=(1000, q.input_count))
    stim = model_inputs(q, codes)
    p = propagate_constants(n)
    assert area(p).gate_equivalents <= area(n).gate_equivalents
    a, b = simulate(n, stim), simulate(p, stim)
    assert all((a[k] == b[k]).all() for k in a)


@pytest.mark.parametrize("name", ["iris_mlp_r", "wine_svm_c", "wine_dt"])
def test_forcing_matches_rebuild_and_shrinks(name):
    _, train, _, q = fixture(name)
    n = synth_model(q)
    stim = model_inputs(q, np.random.default_rng(3).integers(0, q.input_format.max_code + 1, size=(300, q.input_count)))
    rng = np.random.default_rng(4)
    logic = [k for k, g in enumerate(n.gates) if g.kind not in ("CONST0", "CONST1")]
    base_area = area(n).gate_equivalents
    act = profile_activity(n, stim)
    base_power = power_proxy(area(n), act)
    for _ in range(5):
        forced = {int(k): int(rng.integers(0, 2)) for k in rng.choice(logic, size=8, replace=False)}
        r = rebuild(n, forced)
        a, b = simulate(n, stim, forced=forced), simulate(r, stim)
        assert all((a[k] == b[k]).all() for k in a)
        assert area(r).gate_equivalents < base_area
        assert power_proxy(area(r), profile_activity(r, stim)) < base_power


def test_area_is_weighted_sum():
    _, _, _, q = fixture("wine_svm_c")
    n = synth_model(q)
    rep = area(n)
    assert rep.gate_equivalents == sum(GATE_EQUIVALENTS[g.kind] for g in n.gates)
    assert rep.per_gate_weights["CONST0"] == rep.per_gate_weights["CONST1"] == 0


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_activity_partition_independent(workers):
    _, train, _, q = fixture("cancer_svm_c")
    n = synth_model(q)
    stim = model_inputs(q, np.random.default_rng(6).integers(0, 16, size=(401, q.input_count)))
    a, b = profile_activity(n, stim), profile_activity(n, stim, workers=workers)
    assert (a.toggle_rate == b.toggle_rate).all() and (a.ones == b.ones).all()
    assert a.stuck_value == b.stuck_value
    s1, s2 = simulate(n, stim), simulate(n, stim, workers=workers)
    assert all((s1[k] == s2[k]).all() for k in s1)


def test_activity_definitions():
    b = NetlistBuilder()
    a = b.input("a", 1)[0]
    c = b.input("c", 1)[0]
    b.output("y", [b.and_(a, c), b.or_(a, c)])
    n = b.build()
    act = profile_activity(n, {"a": [0, 1, 0, 1], "c": [0, 0, 0, 0]})
    and_k = next(k for k, g in enumerate(n.gates) if g.kind == "AND2")
    or_k = next(k for k, g in enumerate(n.gates) if g.kind == "OR2")
    assert act.toggle_rate[and_k] == 0 and act.stuck_value[and_k] == 0
    assert act.toggle_rate[or_k] == 1 and or_k not in act.stuck_value


def test_json_and_verilog_export():
    _, _, _, q = fixture("iris_dt")
    n = synth_model(q)
    again = from_json_dict(json.loads(json.dumps(to_json_dict(n))))
    assert again.structure() == n.structure()
    v = to_verilog(n)
    assert v.startswith("module ") and v.rstrip().endswith("endmodule")
    assert "input [7:0] x0" in v and "output [" in v


# random expression DAGs: the simplifying builder must preserve the function
ops = st.sampled_from(["NOT", "AND2", "OR2", "NAND2", "NOR2", "XOR2", "XNOR2", "MUX2", "CONST0", "CONST1"])
PY = {
    "NOT": lambda a: 1 - a, "AND2": lambda a, b: a & b, "OR2": lambda a, b: a | b,
    "NAND2": lambda a, b: 1 - (a & b), "NOR2": lambda a, b: 1 - (a | b), "XOR2": lambda a, b: a ^ b,
    "XNOR2": lambda a, b: 1 - (a ^ b), "MUX2": lambda s, x, y: y if s else x,
    "CONST0": lambda: 0, "CONST1": lambda: 1,
}
ARITY = {"NOT": 1, "MUX2": 3, "CONST0": 0, "CONST1": 0}


@settings(max_examples=150, deadline=None)
@given(data=st.data(), n_in=st.integers(1, 4), n_gates=st.integers(1, 25))
def test_builder_preserves_function(data, n_in, n_gates):
    plan = []
    for k in range(n_gates):
        kind = data.draw(ops)
        ar = ARITY.get(kind, 2)
        plan.append((kind, [data.draw(st.integers(0, n_in + k - 1)) for _ in range(ar)]))
    outs = data.draw(st.lists(st.integers(0, n_in + n_gates - 1), min_size=1, max_size=4))
    b = NetlistBuilder()
    nets = b.input("x", n_in)
    for kind, ins in plan:
        nets.append(b.gate(kind, [nets[i] for i in ins]))
    b.output("y", [nets[i] for i in outs])
    n = b.build()
    rows = np.arange(1 << n_in)
    got = simulate(n, {"x": rows})["y"]
    for r in rows.tolist():
        vals = [(r >> i) & 1 for i in range(n_in)]
        for kind, ins in plan:
            vals.append(PY[kind](*[vals[i] for i in ins]))
        want = sum(vals[o] << j for j, o in enumerate(outs))
        assert got[r] == want
    assert area(n).gate_equivalents <= sum(GATE_EQUIVALENTS[k] for k, _ in plan)
