"""Gate-level pruning: pin rarely-switching gates to their usual value."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .netlist import ActivityProfile, Netlist, profile_activity, rebuild, simulate


@dataclass(frozen=True)
class PruneDecision:
    gate: int
    replacement: int  # 0 -> CONST0, 1 -> CONST1
    toggle_rate: float
    majority: int

    @property
    def replacement_kind(self) -> str:
        return "CONST1" if self.replacement else "CONST0"


def rank_gates(act: ActivityProfile) -> list[PruneDecision]:
    """Logic gates by ascending toggle rate (gate id breaks ties)."""
    out = []
    for k, kind in enumerate(act.kinds):
        if kind in ("CONST0", "CONST1"):
            continue
        maj = act.majority(k)
        out.append(PruneDecision(k, maj, float(act.toggle_rate[k]), maj))
    out.sort(key=lambda d: (d.toggle_rate, d.gate))
    return out


class AccuracyOracle:
    """Fraction of stimulus rows whose netlist ``label`` matches the reference labels."""

    def __init__(self, stimuli: Mapping[str, object], labels, workers: int = 1):
        self.stimuli = {k: np.asarray(v, dtype=np.int64) for k, v in stimuli.items()}
        self.labels = np.asarray(labels, dtype=np.int64)
        self.workers = workers

    def correct(self, n: Netlist, forced: Optional[Mapping[int, int]] = None) -> int:
        out = simulate(n, self.stimuli, workers=self.workers, forced=forced)["label"]
        return int(np.sum(out == self.labels))

    def __call__(self, n: Netlist, forced: Optional[Mapping[int, int]] = None) -> float:
        return self.correct(n, forced) / len(self.labels)


def prune_zero_activity(n: Netlist, stimuli: Mapping[str, object]) -> Netlist:
    """Pin every gate that never toggled on ``stimuli`` to its stuck value."""
    act = profile_activity(n, stimuli)
    forced = {k: v for k, v in act.stuck_value.items() if act.kinds[k] not in ("CONST0", "CONST1")}
    return rebuild(n, forced) if forced else n


def prune(
    n: Netlist,
    stimuli: Mapping[str, object],
    evaluate: Callable[..., float],
    accuracy_budget: float,
    batch: int = 32,
    baseline: Optional[float] = None,
    log: Optional[list] = None,
    workers: int = 1,
    max_toggle_rate: Optional[float] = None,
) -> Netlist:
    """Greedy batched pruning under a train-accuracy budget (percentage points).

    ``evaluate(netlist, forced)`` returns accuracy with the gates in ``forced``
    pinned to constants.  A rejected batch is bisected down to single
    decisions.  Passes repeat on the re-profiled netlist until one accepts
    nothing, so the result is a fixed point for the same ``baseline``.
    """
    if accuracy_budget < 0:
        raise ValueError("accuracy budget must be >= 0")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if baseline is None:
        baseline = evaluate(n, None)
    floor = baseline - accuracy_budget / 100.0 - 1e-12
    current = n
    pass_no = 0
    while True:
        act = profile_activity(current, stimuli, workers=workers)
        decisions = rank_gates(act)
        if max_toggle_rate is not None:
            decisions = [d for d in decisions if d.toggle_rate <= max_toggle_rate]
        forced: dict[int, int] = {}
        entries = []

        def attempt(ds: list[PruneDecision]) -> None:
            trial = dict(forced)
            trial.update((d.gate, d.replacement) for d in ds)
            if evaluate(current, trial) >= floor:
                forced.update((d.gate, d.replacement) for d in ds)
                entries.extend(_entry(d, "accepted", pass_no) for d in ds)
                return
            if len(ds) == 1:
                entries.append(_entry(ds[0], "rolled-back", pass_no))
                return
            mid = len(ds) // 2
            attempt(ds[:mid])
            attempt(ds[mid:])

        for i in range(0, len(decisions), batch):
            attempt(decisions[i:i + batch])
        if log is not None:
            log.extend(entries)
        if not forced:
            return current
        current = rebuild(current, forced)
        pass_no += 1


def _entry(d: PruneDecision, status: str, pass_no: int) -> dict:
    return {"pass": pass_no, "gate": d.gate, "replacement": d.replacement_kind,
            "toggle_rate": d.toggle_rate, "majority": d.majority, "status": status}
