"""NSGA-II over per-comparator (threshold, input precision) settings of a decision tree.

A genome holds one ``(threshold, bits)`` pair per internal node, in node
order.  Both the input code and the threshold keep their top ``bits`` bits,
so lowering precision shrinks the comparator structurally.  Objectives, both
minimized: validation accuracy loss in percentage points against the exact
quantized tree, and the summed area of the comparators.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .fxp import QuantizedModel, quantize_inputs, tree_arrays, tree_predict, with_tree_config
from .model_io import Dataset
from .synth import comparator_area

Genome = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class DtGene:
    """Search bounds for one internal node."""

    node: int
    original: int
    t_lo: int
    t_hi: int
    max_bits: int

    def contains(self, t: int, bits: int) -> bool:
        return self.t_lo <= t <= self.t_hi and 1 <= bits <= self.max_bits


@dataclass(frozen=True)
class ParetoPoint:
    genome: Genome
    loss_pp: float
    area: float
    rank: int = 0
    crowding: float = 0.0

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.loss_pp, self.area)

    @property
    def genome_hash(self) -> str:
        return genome_hash(self.genome)


@dataclass
class EvolveParams:
    pop: int = 100
    gens: int = 100
    seed: int = 0
    crossover_p: float = 0.9
    mutation_p: Optional[float] = None  # default 1 / number of genome fields
    budget: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.pop < 4 or self.pop % 2:
            raise ValueError("population must be even and >= 4")
        if self.gens < 0:
            raise ValueError("gens must be >= 0")
        if self.budget < 0:
            raise ValueError("accuracy budget must be >= 0")


@dataclass
class EvolveResult:
    front: list[ParetoPoint]        # non-dominated over every evaluated genome
    population: list[ParetoPoint]   # final population, with rank and crowding
    selected: ParetoPoint
    exact: ParetoPoint
    evaluations: int
    history: list[dict] = field(default_factory=list)

    def area_gain_pct(self) -> float:
        base = self.exact.area
        return 0.0 if base == 0 else 100.0 * (base - self.selected.area) / base


def genome_hash(g: Genome) -> str:
    text = ";".join(f"{t},{b}" for t, b in g)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def gene_bounds(q: QuantizedModel, delta: int) -> list[DtGene]:
    if not q.is_tree:
        raise ValueError("dt-evolve needs a decision tree")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    full = q.input_format.total_bits
    top = (1 << full) - 1
    out = []
    for n in q.nodes:
        if n.is_leaf:
            continue
        t = n.threshold
        # thresholds of 2^B (never-true) stay reachable as the original value
        out.append(DtGene(n.id, t, max(0, t - delta), max(t, min(top, t + delta)), full))
    return out


def exact_genome(q: QuantizedModel) -> Genome:
    full = q.input_format.total_bits
    return tuple((n.threshold, n.bits or full) for n in q.nodes if not n.is_leaf)


def dt_area_proxy(genome: Genome, q: QuantizedModel) -> float:
    """Sum of comparator areas for the truncated thresholds."""
    full = q.input_format.total_bits
    return float(sum(comparator_area(t >> (full - k), k) for t, k in genome))


def apply_genome(q: QuantizedModel, genome: Genome) -> QuantizedModel:
    return with_tree_config(q, [t for t, _ in genome], [k for _, k in genome])


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def fast_nondominated_sort(objs: Sequence[Sequence[float]]) -> list[list[int]]:
    """Fronts as lists of indices into ``objs``; front 0 is non-dominated."""
    n = len(objs)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for p in range(n):
        for r in range(p + 1, n):
            if dominates(objs[p], objs[r]):
                dominated_by[p].append(r)
                count[r] += 1
            elif dominates(objs[r], objs[p]):
                dominated_by[r].append(p)
                count[p] += 1
    fronts = [[p for p in range(n) if count[p] == 0]]
    while fronts[-1]:
        nxt = []
        for p in fronts[-1]:
            for r in dominated_by[p]:
                count[r] -= 1
                if count[r] == 0:
                    nxt.append(r)
        fronts.append(sorted(nxt))
    return fronts[:-1]


def crowding_distance(objs: Sequence[Sequence[float]]) -> list[float]:
    n = len(objs)
    if n == 0:
        return []
    dist = [0.0] * n
    for m in range(len(objs[0])):
        order = sorted(range(n), key=lambda i: (objs[i][m], i))
        lo, hi = objs[order[0]][m], objs[order[-1]][m]
        dist[order[0]] = dist[order[-1]] = math.inf
        if hi == lo:
            continue
        for j in range(1, n - 1):
            dist[order[j]] += (objs[order[j + 1]][m] - objs[order[j - 1]][m]) / (hi - lo)
    return dist


class _Fitness:
    """Cached (loss_pp, area) evaluation on a fixed validation set."""

    def __init__(self, q: QuantizedModel, validation: Dataset):
        self.q = q
        self.full = q.input_format.total_bits
        self.codes = quantize_inputs(q, validation.features)
        self.labels = np.asarray(validation.labels)
        self.base = tree_arrays(q)
        self.exact_correct = int(np.sum(tree_predict(self.base, self.codes) == self.labels))
        self.cache: dict[Genome, tuple[float, float]] = {}

    def _compute(self, g: Genome) -> tuple[float, float]:
        t = self.base
        thr = t.threshold.copy()
        shift = t.shift.copy()
        for pos, (v, k) in zip(t.internal, g):
            shift[pos] = self.full - k
            thr[pos] = v >> shift[pos]
        arr = replace(t, threshold=thr, shift=shift)
        correct = int(np.sum(tree_predict(arr, self.codes) == self.labels))
        loss = 100.0 * (self.exact_correct - correct) / len(self.labels)
        return (loss, dt_area_proxy(g, self.q))

    def evaluate(self, genomes: list[Genome], workers: int = 1) -> list[tuple[float, float]]:
        todo = list(dict.fromkeys(g for g in genomes if g not in self.cache))
        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(workers) as ex:
                results = list(ex.map(self._compute, todo))
        else:
            results = [self._compute(g) for g in todo]
        self.cache.update(zip(todo, results))
        return [self.cache[g] for g in genomes]


def _random_genome(rng: np.random.Generator, genes: list[DtGene]) -> Genome:
    return tuple((int(rng.integers(g.t_lo, g.t_hi + 1)), int(rng.integers(1, g.max_bits + 1))) for g in genes)


def _mutate(rng, genome: Genome, genes: list[DtGene], p: float) -> Genome:
    out = []
    for (t, k), g in zip(genome, genes):
        if rng.random() < p:
            t = int(rng.integers(g.t_lo, g.t_hi + 1))
        if rng.random() < p:
            k = int(rng.integers(1, g.max_bits + 1))
        out.append((t, k))
    return tuple(out)


def _crossover(rng, a: Genome, b: Genome, p: float) -> tuple[Genome, Genome]:
    if rng.random() >= p:
        return a, b
    swap = rng.random(len(a)) < 0.5
    c1 = tuple(y if s else x for x, y, s in zip(a, b, swap))
    c2 = tuple(x if s else y for x, y, s in zip(a, b, swap))
    return c1, c2


def _tournament(rng, rank: list[int], crowd: list[float]) -> int:
    i, j = (int(v) for v in rng.integers(0, len(rank), size=2))
    if rank[i] != rank[j]:
        return i if rank[i] < rank[j] else j
    if crowd[i] != crowd[j]:
        return i if crowd[i] > crowd[j] else j
    return min(i, j)


def _rank_and_crowd(objs: list[tuple[float, float]]) -> tuple[list[list[int]], list[int], list[float]]:
    fronts = fast_nondominated_sort(objs)
    rank = [0] * len(objs)
    crowd = [0.0] * len(objs)
    for r, f in enumerate(fronts):
        d = crowding_distance([objs[i] for i in f])
        for i, v in zip(f, d):
            rank[i] = r
            crowd[i] = v
    return fronts, rank, crowd


def _environmental_select(objs: list[tuple[float, float]], size: int) -> list[int]:
    fronts, _, crowd = _rank_and_crowd(objs)
    keep: list[int] = []
    for f in fronts:
        if len(keep) + len(f) <= size:
            keep.extend(f)
            continue
        ordered = sorted(f, key=lambda i: (-crowd[i], i))
        keep.extend(ordered[: size - len(keep)])
        break
    return keep


class _Archive:
    """Non-dominated set over every evaluated genome; first genome per objective pair."""

    def __init__(self):
        self.points: dict[tuple[float, float], Genome] = {}

    def add(self, g: Genome, obj: tuple[float, float]) -> None:
        if obj in self.points:
            return
        for o in self.points:
            if dominates(o, obj):
                return
        self.points = {o: h for o, h in self.points.items() if not dominates(obj, o)}
        self.points[obj] = g

    def items(self) -> list[tuple[Genome, tuple[float, float]]]:
        return sorted(((g, o) for o, g in self.points.items()), key=lambda kv: (kv[1][1], kv[1][0], kv[0]))


def _select(cands: list[tuple[Genome, tuple[float, float]]], budget: float) -> tuple[Genome, tuple[float, float]]:
    feasible = [c for c in cands if c[1][0] <= budget + 1e-9]
    return min(feasible, key=lambda c: (c[1][1], c[1][0], c[0]))


def evolve(
    q: QuantizedModel,
    train: Optional[Dataset],
    validation: Dataset,
    delta: int,
    params: Optional[EvolveParams] = None,
) -> EvolveResult:
    """Run NSGA-II; the exact genome is always part of the initial population.

    ``train`` is accepted for interface symmetry; fitness uses ``validation`` only.
    Each offspring pair draws from its own ``(seed, generation, pair)`` stream,
    so results do not depend on ``params.workers``.
    """
    p = params or EvolveParams()
    genes = gene_bounds(q, delta)
    exact = exact_genome(q)
    fit = _Fitness(q, validation)
    if not genes:
        obj = fit.evaluate([exact])[0]
        pt = ParetoPoint(exact, obj[0], obj[1], 0, math.inf)
        return EvolveResult([pt], [pt], pt, pt, 1)
    mut_p = p.mutation_p if p.mutation_p is not None else 1.0 / (2 * len(genes))
    archive = _Archive()
    evaluations = 0

    pop = [exact] + [_random_genome(np.random.default_rng([p.seed, 0, i]), genes) for i in range(1, p.pop)]
    objs = fit.evaluate(pop, p.workers)
    evaluations += len(pop)
    for g, o in zip(pop, objs):
        archive.add(g, o)
    history = []
    for gen in range(1, p.gens + 1):
        _, rank, crowd = _rank_and_crowd(objs)
        children: list[Genome] = []
        for pair in range(p.pop // 2):
            rng = np.random.default_rng([p.seed, gen, pair])
            a = pop[_tournament(rng, rank, crowd)]
            b = pop[_tournament(rng, rank, crowd)]
            c1, c2 = _crossover(rng, a, b, p.crossover_p)
            children.append(_mutate(rng, c1, genes, mut_p))
            children.append(_mutate(rng, c2, genes, mut_p))
        cobjs = fit.evaluate(children, p.workers)
        evaluations += len(children)
        for g, o in zip(children, cobjs):
            archive.add(g, o)
        merged = pop + children
        mobjs = objs + cobjs
        keep = _environmental_select(mobjs, p.pop)
        pop = [merged[i] for i in keep]
        objs = [mobjs[i] for i in keep]
        feas = [o[1] for o in objs if o[0] <= p.budget + 1e-9]
        history.append({"generation": gen, "best_feasible_area": min(feas) if feas else None})

    _, rank, crowd = _rank_and_crowd(objs)
    population = [ParetoPoint(g, o[0], o[1], r, c) for g, o, r, c in zip(pop, objs, rank, crowd)]
    front_items = archive.items()
    fcrowd = crowding_distance([o for _, o in front_items])
    front = [ParetoPoint(g, o[0], o[1], 0, c) for (g, o), c in zip(front_items, fcrowd)]
    sg, so = _select(front_items, p.budget)
    eo = fit.cache[exact]
    return EvolveResult(
        front=front,
        population=population,
        selected=ParetoPoint(sg, so[0], so[1]),
        exact=ParetoPoint(exact, eo[0], eo[1]),
        evaluations=evaluations,
        history=history,
    )


def random_search(
    q: QuantizedModel, validation: Dataset, delta: int, evaluations: int, seed: int, budget: float = 1.0
) -> ParetoPoint:
    """Best feasible point among the exact genome plus uniform random genomes."""
    genes = gene_bounds(q, delta)
    fit = _Fitness(q, validation)
    exact = exact_genome(q)
    rng = np.random.default_rng([seed, 1 << 30])
    genomes = [exact] + [_random_genome(rng, genes) for _ in range(max(evaluations - 1, 0))]
    objs = fit.evaluate(genomes)
    g, o = _select(list(zip(genomes, objs)), budget)
    return ParetoPoint(g, o[0], o[1])


def pareto_csv(points: Sequence[ParetoPoint]) -> str:
    """Plot-ready CSV; ranks are recomputed over ``points``."""
    objs = [pt.objectives for pt in points]
    _, rank, _ = _rank_and_crowd(objs) if points else ([], [], [])
    rows = sorted(zip(points, rank), key=lambda x: (x[1], x[0].area, x[0].loss_pp, x[0].genome))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["genome-hash", "accuracy_loss_pp", "area_proxy", "rank"])
    for pt, r in rows:
        w.writerow([pt.genome_hash, f"{pt.loss_pp:.6f}", f"{pt.area:.6f}", r + 1])
    return buf.getvalue()


def export_points(result: EvolveResult) -> list[ParetoPoint]:
    """Final population plus the archive front, without duplicate genomes."""
    seen = {}
    for pt in result.front + result.population:
        seen.setdefault(pt.genome, pt)
    return list(seen.values())


def config_to_dict(q: QuantizedModel, genome: Genome) -> dict:
    """ApproxConfig JSON for a decision tree genome."""
    ids = [n.id for n in q.nodes if not n.is_leaf]
    orig = exact_genome(q)
    return {
        "kind": "decision-tree",
        "genome_hash": genome_hash(genome),
        "nodes": [
            {"node": i, "threshold": t, "input_bits": k, "original_threshold": ot, "original_bits": ok}
            for i, (t, k), (ot, ok) in zip(ids, genome, orig)
        ],
    }


def config_from_dict(q: QuantizedModel, raw: dict) -> Genome:
    by_id = {e["node"]: (int(e["threshold"]), int(e["input_bits"])) for e in raw["nodes"]}
    ids = [n.id for n in q.nodes if not n.is_leaf]
    if set(by_id) != set(ids):
        raise ValueError("config does not cover exactly the internal nodes of the tree")
    return tuple(by_id[i] for i in ids)
