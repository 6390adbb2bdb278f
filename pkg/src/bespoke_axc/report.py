"""Flow configuration, equivalence checks and machine-readable reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .fxp import DEFAULT_INPUT_FORMAT, FxpFormat, QuantizedModel, predict_codes, quantize_inputs
from .model_io import Dataset
from .netlist import STATIC_POWER, Netlist, area, power_proxy, profile_activity, rebuild, simulate
from .synth import model_inputs

BATTERIES = (("Molex", 30.0), ("Blue Spark", 3.0), ("harvester", 0.1))
TREE_INPUT_FORMAT = FxpFormat(8, 8, False)


class ConfigError(ValueError):
    pass


@dataclass
class NsgaConfig:
    pop: int = 100
    gens: int = 100
    crossover_p: float = 0.9
    mutation_p: Optional[float] = None


@dataclass
class FlowConfig:
    seed: int
    input_format: Optional[FxpFormat] = None  # None: (4,4) for MLP/SVM, (8,8) for trees
    weight_total_bits: int = 8
    weight_fraction_bits: Optional[int] = None  # None: fitted to the largest folded weight
    delta: int = 2
    accuracy_budget_pp: float = 1.0
    prune_batch: int = 32
    prune_max_toggle_rate: Optional[float] = 0.01
    nsga: NsgaConfig = field(default_factory=NsgaConfig)
    dt_delta: int = 16
    test_fraction: float = 0.3
    validation_fraction: float = 0.3
    static_power: float = STATIC_POWER
    calibration_mw_per_ge: Optional[float] = None
    equivalence_rows: int = 1000
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.accuracy_budget_pp < 0:
            raise ConfigError("accuracy_budget_pp must be >= 0")
        if self.delta < 0 or self.dt_delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.prune_batch < 1:
            raise ConfigError("prune_batch must be >= 1")
        if not 0 < self.test_fraction < 1 or not 0 < self.validation_fraction < 1:
            raise ConfigError("split fractions must lie in (0, 1)")
        if self.calibration_mw_per_ge is not None and self.calibration_mw_per_ge <= 0:
            raise ConfigError("calibration must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.nsga.pop < 4 or self.nsga.pop % 2:
            raise ConfigError("nsga.pop must be even and >= 4")

    def input_format_for(self, kind: str) -> FxpFormat:
        if self.input_format is not None:
            return self.input_format
        return TREE_INPUT_FORMAT if kind == "decision-tree" else DEFAULT_INPUT_FORMAT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_format"] = None if self.input_format is None else self.input_format.to_dict()
        del d["workers"]  # execution detail; outputs do not depend on it
        return d

    @classmethod
    def from_dict(cls, raw: Mapping) -> "FlowConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "seed" not in raw:
            raise ConfigError("seed is mandatory")
        d = dict(raw)
        try:
            if d.get("input_format") is not None:
                d["input_format"] = FxpFormat.from_dict(d["input_format"])
            if "nsga" in d:
                nk = {f.name for f in fields(NsgaConfig)}
                if not isinstance(d["nsga"], Mapping) or set(d["nsga"]) - nk:
                    raise ConfigError(f"nsga accepts only {sorted(nk)}")
                d["nsga"] = NsgaConfig(**d["nsga"])
            return cls(**d)
        except (TypeError, KeyError) as e:
            raise ConfigError(str(e)) from None


def load_config(path, seed: Optional[int] = None) -> FlowConfig:
    raw = {} if path is None else json.loads(Path(path).read_text())
    if seed is not None:
        raw = {**raw, "seed": seed}
    return FlowConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# battery


def battery_check(power: float, calibration: Optional[float]) -> dict:
    """Estimated mW and the named supplies whose limit it does not exceed."""
    if calibration is None:
        return {"note": "no calibration supplied; battery feasibility not assessed"}
    if calibration <= 0:
        raise ValueError("calibration must be > 0")
    mw = power * calibration
    return {
        "calibration_mw_per_ge": calibration,
        "estimated_mW": mw,
        "feasible_under": [name for name, limit in BATTERIES if mw <= limit],
    }


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    model: str
    phase: str  # exact-bespoke | approximated
    accuracy_test: float
    area_proxy: float
    power_proxy: float
    area_gain_pct: float = 0.0
    power_gain_pct: float = 0.0
    battery: Optional[dict] = None
    comparator_area_proxy: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["battery"] is None:
            del d["battery"]
        if d["comparator_area_proxy"] is None:
            del d["comparator_area_proxy"]
        return d


def gain_pct(exact: float, approx: float) -> float:
    return 0.0 if exact == 0 else 100.0 * (exact - approx) / exact


def measure(n: Netlist, q: QuantizedModel, data: Dataset, static: float = STATIC_POWER, workers: int = 1):
    """(accuracy, area GE, power proxy) with activity taken over ``data`` in row order."""
    stim = model_inputs(q, quantize_inputs(q, data.features))
    out = simulate(n, stim, workers=workers)["label"]
    acc = float(np.mean(out == np.asarray(data.labels)))
    a = area(n)
    p = power_proxy(a, profile_activity(n, stim, workers=workers), static)
    return acc, a.gate_equivalents, p


def eval_pair(
    name: str,
    q: QuantizedModel,
    exact: Netlist,
    approx: Netlist,
    test: Dataset,
    static: float = STATIC_POWER,
    calibration: Optional[float] = None,
    comparator: Optional[tuple[float, float]] = None,
    workers: int = 1,
) -> list[EvalReport]:
    ea, eA, eP = measure(exact, q, test, static, workers)
    aa, aA, aP = measure(approx, q, test, static, workers)
    reps = [
        EvalReport(name, "exact-bespoke", ea, eA, eP, 0.0, 0.0),
        EvalReport(name, "approximated", aa, aA, aP, gain_pct(eA, aA), gain_pct(eP, aP)),
    ]
    if calibration is not None:
        for r in reps:
            r.battery = battery_check(r.power_proxy, calibration)
    if comparator is not None:
        reps[0].comparator_area_proxy, reps[1].comparator_area_proxy = comparator
    return reps


# ---------------------------------------------------------------------------
# equivalence


def random_codes(q: QuantizedModel, rows: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0xE9])
    return rng.integers(0, q.input_format.max_code + 1, size=(rows, q.input_count), dtype=np.int64)


def equivalence(q: QuantizedModel, n: Netlist, codes: np.ndarray, workers: int = 1) -> dict:
    """Compare netlist outputs with fixed-point inference row by row."""
    out = simulate(n, model_inputs(q, codes), workers=workers)
    labels, raw = predict_codes(q, codes)
    bad = out["label"] != labels
    for k in range(raw.shape[1]):
        bad |= out[f"out{k}"] != raw[:, k]
    mism = int(np.sum(bad))
    return {"rows": int(codes.shape[0]), "mismatches": mism, "passed": mism == 0}


def verify_prune(before: Netlist, log: Sequence[dict], after: Netlist, stimuli: Mapping, workers: int = 1) -> dict:
    """Replay the accepted decisions pass by pass.

    Each pass is checked two ways: forced-gate simulation of the previous
    netlist versus simulation of its constant-propagated rebuild.
    """
    cur = before
    passes = sorted({e["pass"] for e in log if e["status"] == "accepted"})
    mism = 0
    rows = len(next(iter(stimuli.values())))
    for p in passes:
        forced = {e["gate"]: 1 if e["replacement"] == "CONST1" else 0
                  for e in log if e["pass"] == p and e["status"] == "accepted"}
        nxt = rebuild(cur, forced)
        a = simulate(cur, stimuli, workers=workers, forced=forced)
        b = simulate(nxt, stimuli, workers=workers)
        bad = np.zeros(rows, dtype=bool)
        for k in a:
            bad |= a[k] != b[k]
        mism += int(np.sum(bad))
        cur = nxt
    same = cur.structure() == after.structure()
    return {"rows": rows, "passes": len(passes), "mismatches": mism, "replay_matches": same,
            "passed": mism == 0 and same}


# ---------------------------------------------------------------------------
# files


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_default) + "\n"


def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj))


SUMMARY_COLUMNS = ("circuit", "exact_Ac", "exact_A", "exact_P", "approx_Ac", "approx_A", "approx_P", "AG", "PG")


def summary_rows(reports: Sequence[Sequence[EvalReport]]) -> list[dict]:
    rows = []
    for pair in reports:
        ex = next(r for r in pair if r.phase == "exact-bespoke")
        ap = next(r for r in pair if r.phase == "approximated")
        rows.append({
            "circuit": ex.model,
            "exact_Ac": f"{ex.accuracy_test:.4f}",
            "exact_A": f"{ex.area_proxy:.1f}",
            "exact_P": f"{ex.power_proxy:.2f}",
            "approx_Ac": f"{ap.accuracy_test:.4f}",
            "approx_A": f"{ap.area_proxy:.1f}",
            "approx_P": f"{ap.power_proxy:.2f}",
            "AG": f"{ap.area_gain_pct:.1f}",
            "PG": f"{ap.power_gain_pct:.1f}",
        })
    return rows


def summary_csv(reports: Sequence[Sequence[EvalReport]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(summary_rows(reports))
    return buf.getvalue()


def report_from_dict(raw: Mapping) -> EvalReport:
    return EvalReport(**{f.name: raw.get(f.name) for f in fields(EvalReport) if f.name in raw})
