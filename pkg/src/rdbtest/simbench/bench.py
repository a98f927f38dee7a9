"""Monte-Carlo runner and truth-aware scoring (FWER, FDR, power)."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..balance import rdb_weighted
from ..continuous import ContinuousDesign, rdb_continuous
from ..core import Mode, RdbConfig, rdb_iterate
from ..data import SampleMetadata, split_groups, to_proportions
from ..exceptions import RdbError
from . import baselines
from .generators import ReplicateStreams, Scenario, ScenarioKind, SimulatedData, generate

RDB = "RDB"
RDB_CAL = "RDB-CAL"
WELCH_TSS_BONF = "WELCH_TSS_BONF"
WELCH_TSS_BH = "WELCH_TSS_BH"
WILCOXON_RAW = "WILCOXON_RAW"
WILCOXON_TSS = "WILCOXON_TSS"
ALL_METHODS = (RDB, RDB_CAL, WELCH_TSS_BONF, WELCH_TSS_BH, WILCOXON_RAW, WILCOXON_TSS)
BASELINES = (WELCH_TSS_BONF, WELCH_TSS_BH, WILCOXON_RAW, WILCOXON_TSS)


def default_methods(kind: ScenarioKind) -> tuple[str, ...]:
    if kind is ScenarioKind.POISSON_GAMMA_CONTINUOUS:
        return (RDB,)
    if kind is ScenarioKind.LOG_NORMAL_COV:
        return (RDB, RDB_CAL)
    return (RDB,) + BASELINES


def check_methods(kind: ScenarioKind, methods: Sequence[str]) -> None:
    for m in methods:
        if m not in ALL_METHODS:
            raise RdbError(f"unknown method {m!r}; choose from {', '.join(ALL_METHODS)}")
    if kind is ScenarioKind.POISSON_GAMMA_CONTINUOUS and set(methods) - {RDB}:
        raise RdbError("the continuous-outcome scenario only supports RDB")
    if RDB_CAL in methods and kind is not ScenarioKind.LOG_NORMAL_COV:
        raise RdbError("RDB-CAL needs covariates (scenario lognormal-cov)")


@dataclass
class ReplicateScore:
    n_rejected: int
    n_false: int
    fdp: float
    power: Optional[float]
    runtime: float
    balance_residual: Optional[float] = None

    @property
    def false_any(self) -> bool:
        return self.n_false > 0


def score(rejected: set[str], truth_ids: set[str]) -> tuple[int, float, Optional[float]]:
    """(#false discoveries, false discovery proportion, power or None when I1 is empty)."""
    n_false = len(rejected - truth_ids)
    fdp = n_false / max(len(rejected), 1)
    power = len(rejected & truth_ids) / len(truth_ids) if truth_ids else None
    return n_false, fdp, power


@dataclass
class MethodSummary:
    fwer: float
    fwer_se: float
    fdr: float
    fdr_se: float
    power: Optional[float]
    power_se: Optional[float]
    reps: int
    mean_runtime: float
    max_balance_residual: Optional[float] = None


@dataclass
class PerformanceReport:
    scenario: Scenario
    config: RdbConfig
    methods: dict[str, MethodSummary]
    replicates: dict[str, list[ReplicateScore]] = field(default_factory=dict)


def _sd_se(values: Sequence[float]) -> float:
    r = len(values)
    if r < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / math.sqrt(r))


def summarize(scores: Sequence[ReplicateScore]) -> MethodSummary:
    r = len(scores)
    fwer = sum(s.false_any for s in scores) / r
    fdps = [s.fdp for s in scores]
    powers = [s.power for s in scores if s.power is not None]
    residuals = [s.balance_residual for s in scores if s.balance_residual is not None]
    return MethodSummary(
        fwer=fwer,
        fwer_se=math.sqrt(fwer * (1 - fwer) / r),
        fdr=float(np.mean(fdps)),
        fdr_se=_sd_se(fdps),
        power=float(np.mean(powers)) if powers else None,
        power_se=_sd_se(powers) if powers else None,
        reps=r,
        mean_runtime=float(np.mean([s.runtime for s in scores])),
        max_balance_residual=max(residuals) if residuals else None,
    )


def _baseline_rejections(method: str, data: SimulatedData, props: np.ndarray,
                         mode: Mode, alpha: float) -> set[str]:
    g1 = data.labels == "g1"
    if method == WILCOXON_RAW:
        x = data.counts.counts.astype(float)
    else:
        x = props
    x1, x2 = x[:, g1].T, x[:, ~g1].T
    if method in (WELCH_TSS_BONF, WELCH_TSS_BH):
        p = baselines.welch_pvalues(x1, x2)
        adjust = "bonferroni" if method == WELCH_TSS_BONF else "bh"
    else:
        p = baselines.wilcoxon_pvalues(x1, x2)
        adjust = "bonferroni" if mode is Mode.FWER else "bh"
    hits = baselines.reject(p, alpha, adjust)
    return {data.counts.component_ids[i] for i in hits}


def run_replicate(sc: Scenario, methods: Sequence[str], cfg: RdbConfig, rep: int) -> dict[str, ReplicateScore]:
    data = generate(sc, ReplicateStreams(sc.seed, rep))
    comp = to_proportions(data.counts)
    ids = data.counts.component_ids
    truth_ids = {ids[i] for i in data.truth.I1}
    out: dict[str, ReplicateScore] = {}

    if sc.kind is ScenarioKind.POISSON_GAMMA_CONTINUOUS:
        keep = np.flatnonzero(data.counts.counts.sum(axis=1) > 0)
        cdesign = ContinuousDesign(
            comp.props[keep].T, data.outcome, tuple(ids[i] for i in keep),
            tuple((ids[i], "all-zero") for i in np.setdiff1d(np.arange(len(ids)), keep)))
        design = None
    else:
        meta = SampleMetadata(data.counts.sample_ids, {"group": tuple(data.labels)})
        design = split_groups(comp, meta, "group")

    for method in methods:
        t0 = time.perf_counter()
        residual = None
        if method == RDB:
            if design is None:
                rejected = set(rdb_continuous(cdesign, cfg).rejected_ids)
            else:
                rejected = set(rdb_iterate(design, cfg).rejected_ids)
        elif method == RDB_CAL:
            g1 = data.labels == "g1"
            res = rdb_weighted(design, data.covariates[g1], data.covariates[~g1], cfg)
            residual = res.extras["balance_weights"].balance_residual
            rejected = set(res.rejected_ids)
        else:
            rejected = _baseline_rejections(method, data, comp.props, cfg.mode, cfg.alpha)
        elapsed = time.perf_counter() - t0
        n_false, fdp, power = score(rejected, truth_ids)
        out[method] = ReplicateScore(len(rejected), n_false, fdp, power, elapsed, residual)
    return out


def run_scenario(sc: Scenario, methods: Optional[Sequence[str]] = None, reps: int = 100,
                 cfg: RdbConfig = RdbConfig(), threads: int = 1) -> PerformanceReport:
    """Score each method over ``reps`` replicates of ``sc``.

    Replicate r draws from streams keyed by (sc.seed, r), so the report does
    not depend on ``threads``.
    """
    if reps < 1:
        raise RdbError("reps must be >= 1")
    methods = tuple(methods) if methods else default_methods(sc.kind)
    check_methods(sc.kind, methods)

    def one(rep: int):
        try:
            return run_replicate(sc, methods, cfg, rep)
        except RdbError as exc:
            raise RdbError(f"replicate {rep}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]

    per_method = {m: [res[m] for res in results] for m in methods}
    summaries = {m: summarize(scores) for m, scores in per_method.items()}
    return PerformanceReport(sc, cfg, summaries, per_method)
