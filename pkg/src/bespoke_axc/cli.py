"""Command-line entry point: ``bespoke-axc synth|approx|evolve|eval|report|flow``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dt_evolve
from .coeff_approx import approximate_sums
from .fxp import FxpFormat, QuantizedModel, accuracy, fit_weight_format, qmodel_to_dict, quantize_inputs, quantize_model
from .model_io import Dataset, DatasetFormatError, ModelFormatError, TrainedModel, load_dataset, load_model, split
from .netlist import Netlist, from_json_dict, to_json, to_verilog
from .prune import AccuracyOracle, prune
from .report import (
    ConfigError,
    FlowConfig,
    equivalence,
    eval_pair,
    load_config,
    random_codes,
    report_from_dict,
    summary_csv,
    verify_prune,
    write_json,
)
from .synth import model_inputs, synth_model

log = logging.getLogger("bespoke_axc")

EXIT_OK, EXIT_VALIDATION, EXIT_EQUIVALENCE = 0, 2, 3


class ValidationError(Exception):
    pass


class EquivalenceFailure(Exception):
    pass


@dataclass
class Context:
    cfg: FlowConfig
    model: TrainedModel
    train: Dataset
    test: Dataset
    q: QuantizedModel
    out: Path
    netlist_format: str

    @property
    def name(self) -> str:
        return self.model.name


def _context(args) -> Context:
    cfg = load_config(args.config, args.seed)
    if args.calibration_mw_per_ge is not None:
        if args.calibration_mw_per_ge <= 0:
            raise ConfigError("calibration must be > 0")
        cfg.calibration_mw_per_ge = args.calibration_mw_per_ge
    model = load_model(args.model)
    data = load_dataset(args.data, model.input_count, model.class_count)
    train, test = split(data, cfg.test_fraction, cfg.seed)
    infmt = cfg.input_format_for(model.kind)
    if cfg.weight_fraction_bits is None:
        wfmt = fit_weight_format(model, train.feature_ranges, infmt, cfg.weight_total_bits)
    else:
        wfmt = FxpFormat(cfg.weight_total_bits, cfg.weight_fraction_bits, True)
    q = quantize_model(model, infmt, wfmt, train)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return Context(cfg, model, train, test, q, out, args.netlist_format)


def _write_netlist(ctx: Context, stem: str, n: Netlist) -> None:
    (ctx.out / f"{stem}.netlist.json").write_text(to_json(n) + "\n")
    if ctx.netlist_format == "verilog":
        (ctx.out / f"{stem}.v").write_text(to_verilog(n))


def _read_netlist(ctx: Context, stem: str) -> Optional[Netlist]:
    p = ctx.out / f"{stem}.netlist.json"
    return from_json_dict(json.loads(p.read_text())) if p.exists() else None


def _check_codes(ctx: Context):
    return np.vstack([
        random_codes(ctx.q, ctx.cfg.equivalence_rows, ctx.cfg.seed),
        quantize_inputs(ctx.q, ctx.train.features),
        quantize_inputs(ctx.q, ctx.test.features),
    ])


def cmd_synth(ctx: Context) -> dict:
    n = synth_model(ctx.q, ctx.name)
    eq = equivalence(ctx.q, n, _check_codes(ctx), ctx.cfg.workers)
    _write_netlist(ctx, "exact", n)
    write_json(ctx.out / "quantized_model.json", qmodel_to_dict(ctx.q))
    rep = {"model": ctx.name, "kind": ctx.model.kind, "flags": list(ctx.q.flags),
           "gates": n.logic_gate_count(), "equivalence": eq}
    write_json(ctx.out / "synth.json", rep)
    if not eq["passed"]:
        raise EquivalenceFailure(f"exact netlist differs from fixed-point inference on {eq['mismatches']} rows")
    return rep


def cmd_approx(ctx: Context) -> dict:
    if ctx.q.is_tree:
        raise ValidationError("approx targets MLP/SVM models; use evolve for decision trees")
    cfg = ctx.cfg
    budget = cfg.accuracy_budget_pp
    base_correct = round(accuracy(ctx.q, ctx.train) * len(ctx.train))
    qa, plan = approximate_sums(ctx.q, ctx.train, cfg.delta, budget, baseline_correct=base_correct)
    log.info("coefficients: delta %d, train accuracy %.4f", plan.delta, plan.train_accuracy_after)
    coeff = synth_model(qa, ctx.name)
    eq = equivalence(qa, coeff, _check_codes(ctx), cfg.workers)

    train_stim = model_inputs(ctx.q, quantize_inputs(ctx.q, ctx.train.features))
    oracle = AccuracyOracle(train_stim, ctx.train.labels, cfg.workers)
    plog: list = []
    pruned = prune(coeff, train_stim, oracle, budget, cfg.prune_batch, baseline=base_correct / len(ctx.train),
                   log=plog, workers=cfg.workers, max_toggle_rate=cfg.prune_max_toggle_rate)
    log.info("prune: %d gates pinned", sum(e["status"] == "accepted" for e in plog))
    rand_stim = model_inputs(ctx.q, random_codes(ctx.q, cfg.equivalence_rows, cfg.seed))
    peq = verify_prune(coeff, plog, pruned, rand_stim, cfg.workers)

    _write_netlist(ctx, "approx", pruned)
    write_json(ctx.out / "replacement_plan.json", plan.to_dict())
    write_json(ctx.out / "prune_log.json", plog)
    rep = {
        "model": ctx.name,
        "kind": ctx.model.kind,
        "train_accuracy": {
            "exact": base_correct / len(ctx.train),
            "coefficients": plan.train_accuracy_after,
            "pruned": oracle(pruned),
        },
        "pruned_gates": sum(e["status"] == "accepted" for e in plog),
        "equivalence": {"coefficients": eq, "prune": peq, "passed": eq["passed"] and peq["passed"]},
    }
    write_json(ctx.out / "approx.json", rep)
    if not rep["equivalence"]["passed"]:
        raise EquivalenceFailure("approximate netlist failed the equivalence check")
    return rep


def cmd_evolve(ctx: Context) -> dict:
    if not ctx.q.is_tree:
        raise ValidationError("evolve targets decision trees; use approx for MLP/SVM models")
    cfg = ctx.cfg
    fit, val = split(ctx.train, cfg.validation_fraction, cfg.seed)
    params = dt_evolve.EvolveParams(pop=cfg.nsga.pop, gens=cfg.nsga.gens, seed=cfg.seed,
                                    crossover_p=cfg.nsga.crossover_p, mutation_p=cfg.nsga.mutation_p,
                                    budget=cfg.accuracy_budget_pp, workers=cfg.workers)
    res = dt_evolve.evolve(ctx.q, fit, val, cfg.dt_delta, params)
    log.info("evolve: %d evaluations, selected area %.1f of %.1f", res.evaluations, res.selected.area, res.exact.area)
    qa = dt_evolve.apply_genome(ctx.q, res.selected.genome)
    n = synth_model(qa, ctx.name)
    eq = equivalence(qa, n, _check_codes(ctx), cfg.workers)

    _write_netlist(ctx, "approx", n)
    (ctx.out / "pareto.csv").write_text(dt_evolve.pareto_csv(dt_evolve.export_points(res)))
    write_json(ctx.out / "selected_config.json", dt_evolve.config_to_dict(ctx.q, res.selected.genome))
    rep = {
        "model": ctx.name,
        "kind": ctx.model.kind,
        "evaluations": res.evaluations,
        "validation_rows": len(val),
        "exact": {"accuracy_loss_pp": res.exact.loss_pp, "area_proxy": res.exact.area},
        "selected": {"accuracy_loss_pp": res.selected.loss_pp, "area_proxy": res.selected.area,
                     "genome_hash": res.selected.genome_hash},
        "comparator_area_gain_pct": res.area_gain_pct(),
        "front_size": len(res.front),
        "history": res.history,
        "equivalence": eq,
    }
    write_json(ctx.out / "evolve.json", rep)
    if not eq["passed"]:
        raise EquivalenceFailure("approximate tree netlist failed the equivalence check")
    return rep


def _comparator_proxies(ctx: Context):
    if not ctx.q.is_tree:
        return None
    exact = dt_evolve.dt_area_proxy(dt_evolve.exact_genome(ctx.q), ctx.q)
    p = ctx.out / "selected_config.json"
    if not p.exists():
        return exact, exact
    g = dt_evolve.config_from_dict(ctx.q, json.loads(p.read_text()))
    return exact, dt_evolve.dt_area_proxy(g, ctx.q)


def cmd_eval(ctx: Context) -> dict:
    exact = synth_model(ctx.q, ctx.name)
    approx = _read_netlist(ctx, "approx") or exact
    reps = eval_pair(ctx.name, ctx.q, exact, approx, ctx.test, ctx.cfg.static_power,
                     ctx.cfg.calibration_mw_per_ge, _comparator_proxies(ctx), ctx.cfg.workers)
    out = {"model": ctx.name, "kind": ctx.model.kind, "test_rows": len(ctx.test),
           "reports": [r.to_dict() for r in reps]}
    write_json(ctx.out / "eval.json", out)
    return out


def cmd_report(ctx: Context, inputs: list[Path]) -> dict:
    dirs = inputs or [ctx.out]
    models = []
    pairs = []
    for d in dirs:
        ev_path = d / "eval.json"
        if not ev_path.exists():
            raise ValidationError(f"{ev_path} not found; run eval first")
        ev = json.loads(ev_path.read_text())
        reps = [report_from_dict(r) for r in ev["reports"]]
        pairs.append(reps)
        entry = {"model": ev["model"], "kind": ev["kind"], "reports": ev["reports"]}
        for stage in ("approx.json", "evolve.json"):
            p = d / stage
            if p.exists():
                entry["equivalence"] = json.loads(p.read_text())["equivalence"]
        if ctx.cfg.calibration_mw_per_ge is None:
            entry["battery_note"] = "no calibration supplied; battery feasibility not assessed"
        models.append(entry)
    rep = {"config": ctx.cfg.to_dict(), "models": models}
    write_json(ctx.out / "report.json", rep)
    (ctx.out / "summary.csv").write_text(summary_csv(pairs))
    return rep


def cmd_flow(ctx: Context) -> dict:
    cmd_synth(ctx)
    if ctx.q.is_tree:
        cmd_evolve(ctx)
    else:
        cmd_approx(ctx)
    cmd_eval(ctx)
    return cmd_report(ctx, [])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bespoke-axc", description="Approximate bespoke circuit synthesis for small ML models.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (
        ("synth", "quantize the model and emit the exact bespoke netlist"),
        ("approx", "coefficient approximation and gate pruning (MLP/SVM)"),
        ("evolve", "NSGA-II comparator search (decision trees)"),
        ("eval", "test accuracy, area and power of exact and approximate netlists"),
        ("report", "EvalReport JSON and summary CSV"),
        ("flow", "synth, approx or evolve, eval and report in one go"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--netlist-format", choices=("verilog", "json"), default="verilog")
        p.add_argument("--calibration-mw-per-ge", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "report":
            p.add_argument("--inputs", nargs="*", default=[], help="run directories to summarize (default: --out-dir)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ctx = _context(args)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers must be >= 1")
            ctx.cfg.workers = args.workers
        if args.command == "report":
            cmd_report(ctx, [Path(p) for p in args.inputs])
        else:
            {"synth": cmd_synth, "approx": cmd_approx, "evolve": cmd_evolve,
             "eval": cmd_eval, "flow": cmd_flow}[args.command](ctx)
    except EquivalenceFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EQUIVALENCE
    except (ValidationError, ConfigError, ModelFormatError, DatasetFormatError, FileNotFoundError,
            json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
