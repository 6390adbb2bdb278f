import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bespoke_axc.dt_evolve import (
    EvolveParams,
    apply_genome,
    config_from_dict,
    config_to_dict,
    crowding_distance,
    dominates,
    dt_area_proxy,
    evolve,
    exact_genome,
    export_points,
    fast_nondominated_sort,
    gene_bounds,
    pareto_csv,
)
from bespoke_axc.fxp import FxpFormat, predict, quantize_model
from bespoke_axc.model_io import make_dataset, model_from_dict, split
from bespoke_axc.synth import comparator_area

from conftest import TREES, fixture


def brute_fronts(objs):
    left = set(range(len(objs)))
    fronts = []
    while left:
        f = sorted(i for i in left if not any(dominates(objs[j], objs[i]) for j in left if j != i))
        fronts.append(f)
        left -= set(f)
    return fronts


def test_sort_example():
    pts = [(1, 5), (2, 3), (3, 1), (3, 4)]
    assert fast_nondominated_sort(pts) == [[0, 1, 2], [3]]


def test_single_point():
    assert fast_nondominated_sort([(1.0, 2.0)]) == [[0]]
    assert crowding_distance([(1.0, 2.0)]) == [math.inf]


def test_duplicates_share_front_and_crowding():
    pts = [(0, 4), (1, 2), (1, 2), (4, 0)]
    assert fast_nondominated_sort(pts) == [[0, 1, 2, 3]]
    d = crowding_distance(pts)
    assert math.isinf(d[0]) and math.isinf(d[3])
    assert math.isfinite(d[1]) and math.isfinite(d[2])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=1, max_size=64))
def test_sort_matches_brute_force(pts):
    assert fast_nondominated_sort(pts) == brute_fronts(pts)


def _tiny_tree(fmt=FxpFormat(4, 4, False)):
    m = model_from_dict({"kind": "decision-tree", "inputs": 1, "classes": 2, "tree": {"nodes": [
        {"id": 0, "feature": 0, "threshold": 0.5, "left": 1, "right": 2}, {"id": 1, "class": 0}, {"id": 2, "class": 1}]}})
    data = make_dataset([[0.0], [1 - 2.0 ** -fmt.fraction_bits]], [0, 1])
    return quantize_model(m, fmt, FxpFormat(8, 7, True), data)


def test_area_proxy_examples():
    q = _tiny_tree()
    assert q.nodes[0].threshold == 8
    assert dt_area_proxy(((0, 4),), q) == 0
    assert dt_area_proxy(((8, 4),), q) == 0  # MSB wire
    assert dt_area_proxy(((5, 4),), q) == comparator_area(5, 4) > 0


def test_area_proxy_truncation_monotone():
    q = _tiny_tree(FxpFormat(8, 8, False))
    for t in range(256):
        areas = [dt_area_proxy(((t, k),), q) for k in range(8, 0, -1)]
        assert all(b <= a for a, b in zip(areas, areas[1:]))


@pytest.mark.parametrize("name", TREES)
def test_gene_bounds(name):
    _, _, _, q = fixture(name)
    genes = gene_bounds(q, 16)
    assert len(genes) == sum(1 for n in q.nodes if not n.is_leaf)
    for g in genes:
        assert g.contains(g.original, 8)
        assert g.t_lo >= 0 and g.t_hi <= 255 and g.t_hi - g.t_lo <= 32


def _val(name):
    _, train, test, q = fixture(name)
    fit, val = split(train, 0.3, 2022)
    return q, fit, val, test


def test_gens_zero_contains_exact():
    q, fit, val, _ = _val("iris_dt")
    r = evolve(q, fit, val, 16, EvolveParams(pop=8, gens=0, seed=1))
    assert r.exact.genome == exact_genome(q)
    assert r.exact.loss_pp == 0 and r.exact.area == dt_area_proxy(exact_genome(q), q)
    assert exact_genome(q) in [p.genome for p in r.population]


@pytest.mark.parametrize("name", TREES)
def test_evolve_contract(name):
    q, fit, val, _ = _val(name)
    r = evolve(q, fit, val, 16, EvolveParams(pop=20, gens=15, seed=3, budget=1.0))
    objs = [p.objectives for p in r.front]
    assert all(not dominates(a, b) for a in objs for b in objs)
    assert r.selected.loss_pp <= 1.0
    assert r.selected.area <= r.exact.area
    genes = gene_bounds(q, 16)
    for p in r.population + r.front:
        assert all(g.contains(t, k) for g, (t, k) in zip(genes, p.genome))
    # objectives are reproducible from the genome alone
    qs = apply_genome(q, r.selected.genome)
    base = np.mean(predict(q, val.features) == val.labels)
    got = np.mean(predict(qs, val.features) == val.labels)
    assert r.selected.loss_pp == pytest.approx(100 * (base - got))
    assert r.selected.area == dt_area_proxy(r.selected.genome, q)


def test_seed_determinism_and_workers():
    q, fit, val, _ = _val("wine_dt")
    a = evolve(q, fit, val, 16, EvolveParams(pop=16, gens=10, seed=9))
    b = evolve(q, fit, val, 16, EvolveParams(pop=16, gens=10, seed=9, workers=4))
    c = evolve(q, fit, val, 16, EvolveParams(pop=16, gens=10, seed=10))
    assert a.population == b.population and a.front == b.front and a.selected == b.selected
    assert a.population != c.population


def test_params_validation():
    with pytest.raises(ValueError):
        EvolveParams(pop=5)
    with pytest.raises(ValueError):
        EvolveParams(pop=2)


def test_pareto_csv_and_config_round_trip():
    q, fit, val, _ = _val("iris_dt")
    r = evolve(q, fit, val, 8, EvolveParams(pop=12, gens=5, seed=2))
    rows = list(csv.DictReader(io.StringIO(pareto_csv(export_points(r)))))
    assert list(rows[0]) == ["genome-hash", "accuracy_loss_pp", "area_proxy", "rank"]
    assert min(int(x["rank"]) for x in rows) == 1
    cfg = config_to_dict(q, r.selected.genome)
    assert config_from_dict(q, cfg) == r.selected.genome
    with pytest.raises(ValueError):
        config_from_dict(q, {"nodes": cfg["nodes"][1:]})


def test_rejects_non_tree():
    _, train, _, q = fixture("wine_svm_c")
    with pytest.raises(ValueError):
        evolve(q, train, train, 4)
