import numpy as np
import pytest

from bespoke_axc.coeff_approx import approximate_sums
from bespoke_axc.fxp import quantize_inputs
from bespoke_axc.netlist import ActivityProfile, NetlistBuilder, area, simulate
from bespoke_axc.prune import AccuracyOracle, prune, prune_zero_activity, rank_gates
from bespoke_axc.synth import model_inputs, synth_model

from conftest import MODELS, fixture


def _act(rates, ones, rows=10):
    kinds = ("AND2",) * len(rates)
    return ActivityProfile(kinds, np.array(rates, dtype=float), np.array(ones), rows, {})


def test_rank_order_and_majority():
    ds = rank_gates(_act([0.0, 0.4, 0.1], [0, 7, 5]))
    assert [d.toggle_rate for d in ds] == [0.0, 0.1, 0.4]
    assert [d.gate for d in ds] == [0, 2, 1]
    # 5 ones of 10 rows is a tie -> CONST0; 7 of 10 -> CONST1
    assert ds[1].replacement_kind == "CONST0"
    assert ds[2].replacement_kind == "CONST1"


def test_rank_ties_by_gate_id():
    ds = rank_gates(_act([0.2, 0.2, 0.0, 1.0], [0, 0, 0, 5]))
    assert [d.gate for d in ds] == [2, 0, 1, 3]
    assert ds[-1].toggle_rate == 1.0


def _setup(name):
    _, train, _, q = fixture(name)
    n = synth_model(q)
    stim = model_inputs(q, quantize_inputs(q, train.features))
    return q, train, n, stim


@pytest.mark.parametrize("name", MODELS)
def test_zero_activity_prune_is_safe(name):
    q, train, n, stim = _setup(name)
    p = prune_zero_activity(n, stim)
    a, b = simulate(n, stim), simulate(p, stim)
    assert all((a[k] == b[k]).all() for k in a)
    assert area(p).gate_equivalents <= area(n).gate_equivalents


def test_dead_branch_removed():
    b = NetlistBuilder()
    x = b.input("x", 2)
    dead = b.and_(x[0], x[1])
    b.output("y", [b.or_(dead, b.const(1)), x[0]])
    n = b.build()
    assert n.logic_gate_count() == 0
    assert simulate(n, {"x": [0, 1, 2, 3]})["y"].tolist() == [1, 3, 1, 3]


def test_budget_zero_only_keeps_outputs():
    q, train, n, stim = _setup("wine_svm_c")
    orc = AccuracyOracle(stim, train.labels)
    base = orc(n)
    p = prune(n, stim, orc, 0.0)
    assert orc(p) >= base - 1e-12
    assert area(p).gate_equivalents <= area(n).gate_equivalents


@pytest.mark.parametrize("name,cap", [("cancer_svm_c", None), ("iris_mlp_r", 0.01), ("wine_svm_c", 0.05)])
def test_prune_properties(name, cap):
    q, train, n, stim = _setup(name)
    orc = AccuracyOracle(stim, train.labels)
    base = orc(n)
    log = []
    p = prune(n, stim, orc, 1.0, batch=16, baseline=base, log=log, max_toggle_rate=cap)
    assert orc(p) >= base - 0.01 - 1e-12
    accepted = [e for e in log if e["status"] == "accepted"]
    a0, a1 = area(n).gate_equivalents, area(p).gate_equivalents
    assert a1 <= a0
    assert (a1 == a0) == (not accepted)
    for e in log:
        assert e["replacement"] in ("CONST0", "CONST1")
        assert e["status"] in ("accepted", "rolled-back")
        if cap is not None:
            assert e["toggle_rate"] <= cap
    again = prune(p, stim, orc, 1.0, batch=16, baseline=base, max_toggle_rate=cap)
    assert again.structure() == p.structure()


def test_batch_size_does_not_break_budget():
    q, train, n, stim = _setup("iris_mlp_r")
    orc = AccuracyOracle(stim, train.labels)
    base = orc(n)
    for batch in (1, 7, 64):
        p = prune(n, stim, orc, 1.0, batch=batch, baseline=base)
        assert orc(p) >= base - 0.01 - 1e-12


def test_prune_after_coefficients_on_pruned_netlist_only():
    _, train, _, q = fixture("cancer_mlp_c")
    qa, _ = approximate_sums(q, train, delta=4)
    n = synth_model(qa)
    stim = model_inputs(q, quantize_inputs(q, train.features))
    orc = AccuracyOracle(stim, train.labels)
    p = prune(n, stim, orc, 1.0, baseline=orc(synth_model(q)), max_toggle_rate=0.01)
    assert area(p).gate_equivalents < area(n).gate_equivalents


def test_bad_arguments():
    q, train, n, stim = _setup("iris_dt")
    orc = AccuracyOracle(stim, train.labels)
    with pytest.raises(ValueError):
        prune(n, stim, orc, -1.0)
    with pytest.raises(ValueError):
        prune(n, stim, orc, 1.0, batch=0)


def test_worker_count_does_not_change_result():
    q, train, n, stim = _setup("cancer_svm_c")
    r = []
    for w in (1, 4):
        orc = AccuracyOracle(stim, train.labels, workers=w)
        log = []
        r.append((prune(n, stim, orc, 1.0, log=log, workers=w, max_toggle_rate=0.05).structure(), log))
    assert r[0] == r[1]
