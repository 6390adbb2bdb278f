"""Hardware-aware coefficient replacement for weighted sums.

Each weight may move to a nearby value whose constant multiplier is cheaper.
Inside one neuron (or SVM binary classifier) the signed deviations are
steered so they cancel: once the running error is nonzero, only candidates
pushing it back toward zero are adopted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .fxp import FxpFormat, QuantizedModel, neuron_bounds, predict
from .model_io import Dataset
from .synth import mult_area, width_for


@dataclass(frozen=True)
class Candidate:
    value: int
    mult_area: float


@dataclass(frozen=True)
class CandidateSet:
    original: int
    candidates: tuple[Candidate, ...]  # ascending area, then |value - original|
    window: int

    def area_of(self, value: int) -> float:
        for c in self.candidates:
            if c.value == value:
                return c.mult_area
        raise KeyError(value)


def candidate_set(
    w: int, delta: int, in_bits: int, fmt: Optional[FxpFormat] = None, in_signed: bool = False
) -> CandidateSet:
    """Values within ``delta`` of ``w`` whose multiplier is strictly cheaper, plus ``w``."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    lo, hi = w - delta, w + delta
    if fmt is not None:
        lo, hi = max(lo, fmt.min_code), min(hi, fmt.max_code)
    base = mult_area(w, in_bits, in_signed)
    cands = [Candidate(w, base)]
    for v in range(lo, hi + 1):
        if v == w:
            continue
        a = mult_area(v, in_bits, in_signed)
        if a < base:
            cands.append(Candidate(v, a))
    cands.sort(key=lambda c: (c.mult_area, abs(c.value - w), c.value))
    return CandidateSet(w, tuple(cands), delta)


@dataclass(frozen=True)
class Adoption:
    position: int
    original: int
    chosen: int
    error_before: int


@dataclass
class NeuronPlan:
    layer: int
    row: int
    chosen: dict[int, int]
    error: int
    trace: list[Adoption] = field(default_factory=list)
    area_before: float = 0.0
    area_after: float = 0.0


@dataclass
class ReplacementPlan:
    delta: int
    error_budget: int
    neurons: list[NeuronPlan]
    train_accuracy_before: float = 0.0
    train_accuracy_after: float = 0.0
    attempts: list[dict] = field(default_factory=list)

    @property
    def area_before(self) -> float:
        return sum(n.area_before for n in self.neurons)

    @property
    def area_after(self) -> float:
        return sum(n.area_after for n in self.neurons)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "error_budget": self.error_budget,
            "train_accuracy_before": self.train_accuracy_before,
            "train_accuracy_after": self.train_accuracy_after,
            "multiplier_area_before": self.area_before,
            "multiplier_area_after": self.area_after,
            "attempts": self.attempts,
            "neurons": [
                {
                    "layer": n.layer,
                    "row": n.row,
                    "neuron_error": n.error,
                    "replacements": [
                        {"position": a.position, "original": a.original, "chosen": a.chosen}
                        for a in n.trace
                        if a.chosen != a.original
                    ],
                }
                for n in self.neurons
            ],
        }


def plan_neuron(
    weights, in_widths, delta: int, error_budget: int, fmt: Optional[FxpFormat] = None, layer: int = 0, row: int = 0
) -> NeuronPlan:
    """Greedy sign-alternating replacement for one weighted sum."""
    sets = [candidate_set(int(w), delta if w else 0, bits, fmt) for w, bits in zip(weights, in_widths)]
    saving = [s.candidates[0].mult_area - s.area_of(s.original) for s in sets]
    # most negative (largest saving) first; position breaks ties
    order = sorted(range(len(sets)), key=lambda j: (saving[j], j))
    err = 0
    chosen: dict[int, int] = {}
    trace = []
    for j in order:
        s = sets[j]
        pick = s.original
        for c in s.candidates:
            dev = c.value - s.original
            if abs(err + dev) > error_budget:
                continue
            if err != 0 and dev != 0 and (dev > 0) == (err > 0):
                continue
            pick = c.value
            break
        trace.append(Adoption(j, s.original, pick, err))
        err += pick - s.original
        chosen[j] = pick
    before = sum(s.area_of(s.original) for s in sets)
    after = sum(s.area_of(chosen[j]) for j, s in enumerate(sets))
    return NeuronPlan(layer, row, chosen, err, trace, before, after)


def input_widths(q: QuantizedModel) -> list[list[int]]:
    """Operand width seen by each layer's multipliers, per input position."""
    first = [q.input_format.total_bits] * q.input_count
    if not q.layers:
        return [first]
    widths = [first]
    bounds = neuron_bounds(q)
    for li, L in enumerate(q.layers[:-1]):
        widths.append([width_for(max(lo, 0) if L.relu else lo, max(hi, 0) if L.relu else hi)
                       for lo, hi in bounds[li]])
    return widths


def apply_plan(q: QuantizedModel, plans: list[NeuronPlan]) -> QuantizedModel:
    by_addr = {(p.layer, p.row): p for p in plans}
    if q.layers:
        layers = []
        for li, L in enumerate(q.layers):
            rows = []
            for r, row in enumerate(L.weights):
                p = by_addr.get((li, r))
                rows.append(tuple(p.chosen[j] for j in range(len(row))) if p else row)
            layers.append(replace(L, weights=tuple(rows)))
        return replace(q, layers=tuple(layers))
    cls = []
    for r, c in enumerate(q.classifiers):
        p = by_addr.get((0, r))
        cls.append(replace(c, weights=tuple(p.chosen[j] for j in range(len(c.weights)))) if p else c)
    return replace(q, classifiers=tuple(cls))


def plan_model(q: QuantizedModel, delta: int, error_budget: Optional[int] = None) -> list[NeuronPlan]:
    budget = delta if error_budget is None else error_budget
    widths = input_widths(q)
    plans = []
    for li, r in q.neurons():
        row = q.layers[li].weights[r] if q.layers else q.classifiers[r].weights
        plans.append(plan_neuron(row, widths[li], delta, budget, q.weight_format, li, r))
    return plans


def _correct(q: QuantizedModel, data: Dataset) -> int:
    return int(np.sum(predict(q, data.features) == data.labels))


def approximate_sums(
    q: QuantizedModel,
    train: Dataset,
    delta: int = 2,
    accuracy_budget: float = 1.0,
    error_budget: Optional[int] = None,
    baseline_correct: Optional[int] = None,
) -> tuple[QuantizedModel, ReplacementPlan]:
    """Replace coefficients, halving ``delta`` until the train-accuracy drop fits the budget (pp).

    ``baseline_correct`` overrides the reference count of correctly classified
    training rows (defaults to that of ``q``).
    """
    if q.is_tree:
        raise ValueError("coefficient approximation targets MLP/SVM weighted sums")
    n = len(train)
    base = _correct(q, train) if baseline_correct is None else baseline_correct
    attempts = []
    d = delta
    while d > 0:
        budget = d if error_budget is None else min(error_budget, d)
        plans = plan_model(q, d, budget)
        cand = apply_plan(q, plans)
        got = _correct(cand, train)
        drop_pp = 100.0 * (base - got) / n
        ok = drop_pp <= accuracy_budget + 1e-9
        attempts.append({"delta": d, "error_budget": budget, "train_accuracy": got / n, "accepted": ok})
        if ok:
            plan = ReplacementPlan(d, budget, plans, base / n, got / n, attempts)
            return cand, plan
        d //= 2
    identity = plan_model(q, 0, 0)
    return q, ReplacementPlan(0, 0, identity, base / n, _correct(q, train) / n, attempts)
