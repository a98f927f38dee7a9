"""Command-line front end.

    rdb test --counts counts.tsv --meta meta.tsv --group status [--out results.tsv]
    rdb simulate --scenario pg --d 200 --s 20 --reps 100 --seed 7 [--out report.tsv]

Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Any, Optional, TextIO

import numpy as np

from . import __version__
from .balance import covariates_for, load_weights, rdb_weighted
from .continuous import continuous_design, rdb_continuous
from .core import RdbConfig, TestOutcome, rdb_iterate
from .data import load_counts, load_metadata, split_groups, to_proportions
from .exceptions import RdbError
from .simbench import PerformanceReport, Scenario, run_scenario

RESULT_COLUMNS = ("component_id", "decision", "direction", "rejection_iteration", "statistic_iter0", "note")
REPORT_COLUMNS = ("method", "metric", "estimate", "se", "reps")


class UsageError(RdbError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; here 2 is reserved for internal errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(x, "value") and isinstance(getattr(x, "value"), str):
        return x.value
    return x


def _fmt(x: Any) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NA"
        return repr(x)
    return str(x)


def _header(command: str, config: dict) -> list[str]:
    return [f"# rdb {__version__} {command}",
            "# config: " + json.dumps(_jsonable(config), sort_keys=True)]


def _open_out(path: Optional[str]) -> TextIO:
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8", newline="\n")


def _write_lines(path: Optional[str], lines: list[str]) -> None:
    fh = _open_out(path)
    try:
        fh.write("\n".join(lines) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def _write_json(path: str, header: list[str], payload: dict) -> None:
    # a JSON document cannot carry '#' comments, so the provenance goes in a key
    payload = {"provenance": [h.lstrip("# ") for h in header], **payload}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=False)
        fh.write("\n")


def _median_threshold(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rdb", description="Robust differential abundance testing.")
    p.add_argument("--version", action="version", version=f"rdb {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="test components of a count table")
    t.add_argument("--counts", required=True, help="TSV, components x samples, header 'component_id'")
    t.add_argument("--meta", required=True, help="TSV, header 'sample_id'")
    t.add_argument("--group", help="two-level metadata column")
    t.add_argument("--outcome", help="numeric metadata column (continuous outcome)")
    t.add_argument("--alpha", type=float, default=0.1)
    t.add_argument("--mode", choices=("fwer", "fdr"), default="fwer")
    t.add_argument("--balance", help="comma-separated covariate columns to balance")
    t.add_argument("--weights", help="TSV of sample_id, weight")
    t.add_argument("--rq", type=float, default=0.2, help="two-sided threshold inflation r_Q")
    t.add_argument("--m-threshold", type=_median_threshold, default="auto",
                   help="median threshold M, or 'auto' for sqrt(2 ln d / d)")
    t.add_argument("--fdr-tail", choices=("rayleigh", "halfnormal"), default="rayleigh")
    t.add_argument("--group1", help="level of --group to treat as group 1")
    t.add_argument("--out", help="results TSV (default stdout)")
    t.add_argument("--json", help="JSON with the iteration trace and thresholds")

    s = sub.add_parser("simulate", help="Monte-Carlo benchmark on synthetic data")
    s.add_argument("--scenario", required=True,
                   choices=("pg", "pg-continuous", "lognormal", "lognormal-cov", "shuffle"))
    s.add_argument("--d", type=int, default=200)
    s.add_argument("--s", type=int, default=20)
    s.add_argument("--m1", type=int, default=50, help="group-1 size (sample count for pg-continuous)")
    s.add_argument("--m2", type=int, default=50)
    s.add_argument("--setting", type=int, choices=(1, 2), default=1)
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--methods", help="comma-separated method names")
    s.add_argument("--control", choices=("fwer", "fdr"), default="fwer")
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--source", help="count TSV to shuffle (scenario shuffle)")
    s.add_argument("--threads", type=int, default=None, help="worker threads (default $RDB_THREADS or 1)")
    s.add_argument("--out", help="report TSV (default stdout)")
    s.add_argument("--json", help="report JSON")
    return p


def _config(args) -> RdbConfig:
    return RdbConfig(alpha=args.alpha, median_threshold=args.m_threshold, r_q=args.rq,
                     mode=args.mode, fdr_tail=args.fdr_tail, group1_override=args.group1)


def result_rows(outcome: TestOutcome) -> list[str]:
    rows = ["\t".join(RESULT_COLUMNS)]
    for c in outcome.components:
        rows.append("\t".join([
            c.component_id, c.decision, c.direction or "",
            "" if c.rejection_iteration is None else str(c.rejection_iteration),
            "" if c.first_iteration_statistic is None else _fmt(c.first_iteration_statistic),
            c.note,
        ]))
    return rows


def outcome_json(outcome: TestOutcome, ids: tuple[str, ...]) -> dict:
    trace = [{
        "iteration": tr.iteration,
        "direction": tr.direction.value,
        "median": tr.median,
        "active": [ids[i] for i in tr.active],
        "statistics": dict(zip((ids[i] for i in tr.active), tr.statistics.tolist())),
        "rejected": [ids[i] for i in tr.rejected],
    } for tr in outcome.trace]
    extras = {}
    for k, v in outcome.extras.items():
        extras[k] = v.as_dict() if hasattr(v, "as_dict") else v
    return {
        "thresholds": outcome.thresholds.as_dict(),
        "total_iterations": outcome.total_iterations,
        "rejected": outcome.rejected_ids,
        "components": [vars(c) for c in outcome.components],
        "trace": trace,
        "extras": extras,
    }


def cmd_test(args) -> int:
    if args.group and args.outcome:
        raise UsageError("--group and --outcome are mutually exclusive")
    if not args.group and not args.outcome:
        raise UsageError("one of --group or --outcome is required")
    if args.balance and args.weights:
        raise UsageError("--balance and --weights are mutually exclusive")
    if args.outcome and (args.balance or args.weights):
        raise UsageError("--balance/--weights apply to two-group tests only")
    if args.outcome and args.group1:
        raise UsageError("--group1 needs --group")
    cfg = _config(args)

    resolved = {"command": "test", "counts": args.counts, "meta": args.meta, "group": args.group,
                "outcome": args.outcome, "balance": args.balance, "weights": args.weights,
                **cfg.as_dict()}
    header = _header("test", resolved)
    print(header[1].lstrip("# "), file=sys.stderr)

    comp = to_proportions(load_counts(args.counts))
    meta = load_metadata(args.meta)
    if args.outcome:
        data = continuous_design(comp, meta, args.outcome)
        outcome = rdb_continuous(data, cfg)
        ids = data.component_ids
    else:
        design = split_groups(comp, meta, args.group, args.group1)
        ids = design.component_ids
        if args.balance:
            cols = [c.strip() for c in args.balance.split(",") if c.strip()]
            X1, X2 = covariates_for(design, meta, cols)
            outcome = rdb_weighted(design, X1, X2, cfg, names=cols)
        elif args.weights:
            outcome = rdb_weighted(design, None, None, cfg, weights=load_weights(args.weights, design))
        else:
            outcome = rdb_iterate(design, cfg)

    _write_lines(args.out, header + result_rows(outcome))
    if args.json:
        _write_json(args.json, header, outcome_json(outcome, ids))
    return 0


def report_rows(report: PerformanceReport) -> list[str]:
    rows = ["\t".join(REPORT_COLUMNS)]
    for method, s in report.methods.items():
        metrics = [("fwer", s.fwer, s.fwer_se), ("fdr", s.fdr, s.fdr_se), ("power", s.power, s.power_se)]
        if s.max_balance_residual is not None:
            metrics.append(("max_balance_residual", s.max_balance_residual, None))
        for name, est, se in metrics:
            rows.append("\t".join([method, name, _fmt(est), _fmt(se), str(s.reps)]))
    return rows


def report_json(report: PerformanceReport) -> dict:
    methods = {}
    for method, s in report.methods.items():
        entry = {k: v for k, v in vars(s).items() if k != "mean_runtime"}
        methods[method] = entry
    return {"scenario": report.scenario.as_dict(), "config": report.config.as_dict(), "methods": methods}


def _threads(value: Optional[int]) -> int:
    if value is None:
        env = os.environ.get("RDB_THREADS", "1")
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"RDB_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError("--threads must be >= 1")
    return value


def cmd_simulate(args) -> int:
    threads = _threads(args.threads)
    source = None
    if args.scenario == "shuffle":
        if not args.source:
            raise UsageError("--scenario shuffle needs --source FILE")
        source = load_counts(args.source)
    elif args.source:
        raise UsageError("--source only applies to --scenario shuffle")
    sc = Scenario(args.scenario, d=args.d, s=args.s, m1=args.m1, m2=args.m2,
                  effect_setting=args.setting, beta=args.beta, rho=args.rho, seed=args.seed,
                  source_counts=source)
    cfg = RdbConfig(alpha=args.alpha, mode=args.control)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()] if args.methods else None

    # thread count is left out on purpose: it does not affect the output
    resolved = {"command": "simulate", "scenario": sc.as_dict(), "reps": args.reps,
                "methods": methods or "default", **cfg.as_dict()}
    header = _header("simulate", resolved)
    print(header[1].lstrip("# "), file=sys.stderr)

    report = run_scenario(sc, methods, args.reps, cfg, threads=threads)
    _write_lines(args.out, header + report_rows(report))
    if args.json:
        _write_json(args.json, header, report_json(report))
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "test":
            return cmd_test(args)
        return cmd_simulate(args)
    except (RdbError, OSError) as exc:
        print(f"rdb: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort guard, reported as internal
        print(f"rdb: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
