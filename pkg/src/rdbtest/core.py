"""The RDB iteration: renormalized statistics, median direction, rejections.

Every statistic engine is a callable mapping an array of active component
positions to the statistic vector over those positions. The iteration in
``run_engine`` only talks to that callable, so the two-sample, weighted
and continuous variants share the same loop and trace schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .data import TwoSampleDesign
from .error_control import TailLaw, analytic_critical_value, search_fdr_threshold
from .exceptions import DegenerateDesignError, RdbError

# |numerator| below this counts as zero when the variance term vanishes
ZERO_DIFF_TOL = 1e-12
# noiseless oracle: renormalized differences below this, relative to the
# component's own renormalized size, are exact zeros. An absolute cutoff
# would erase genuine signs of components with tiny proportions.
ORACLE_ZERO_TOL = 1e-12

StatEngine = Callable[[np.ndarray], np.ndarray]


class Direction(str, Enum):
    TWO_SIDED = "two-sided"
    NEG_ONLY = "neg-only"
    POS_ONLY = "pos-only"

    def flipped(self) -> "Direction":
        if self is Direction.NEG_ONLY:
            return Direction.POS_ONLY
        if self is Direction.POS_ONLY:
            return Direction.NEG_ONLY
        return self


class Mode(str, Enum):
    FWER = "fwer"
    FDR = "fdr"


@dataclass(frozen=True)
class RdbConfig:
    alpha: float = 0.1
    median_threshold: Union[float, str] = "auto"
    r_q: float = 0.2
    critical_value: str = "analytic-upper-bound"
    mode: Mode = Mode.FWER
    fdr_tail: TailLaw = TailLaw.RAYLEIGH
    group1_override: Optional[str] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise RdbError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.median_threshold != "auto":
            m = float(self.median_threshold)
            if not m >= 0 or math.isinf(m):
                raise RdbError(f"median threshold must be a finite value >= 0, got {self.median_threshold}")
            object.__setattr__(self, "median_threshold", m)
        if not self.r_q >= 0 or math.isinf(self.r_q):
            raise RdbError(f"r_Q must be a finite value >= 0, got {self.r_q}")
        if self.critical_value != "analytic-upper-bound":
            raise RdbError("only the analytic-upper-bound critical value is supported")
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "fdr_tail", TailLaw(self.fdr_tail))

    def as_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "median_threshold": self.median_threshold,
            "r_q": self.r_q,
            "critical_value": self.critical_value,
            "mode": self.mode.value,
            "fdr_tail": self.fdr_tail.value,
            "group1_override": self.group1_override,
        }


@dataclass(frozen=True)
class Thresholds:
    M: float
    q_tilde: float
    D_plus: float
    D_minus: float
    D_pm: float

    def as_dict(self) -> dict[str, float]:
        return {"M": self.M, "q_tilde": self.q_tilde, "D_plus": self.D_plus,
                "D_minus": self.D_minus, "D_pm": self.D_pm}


def default_thresholds(d: int, cfg: RdbConfig, critical: Optional[float] = None) -> Thresholds:
    """Thresholds for ``d`` retained components.

    ``critical`` replaces q_tilde in D+, D- and D+- (the FDR search uses it).
    """
    if d < 2:
        raise DegenerateDesignError(f"need at least 2 components to test, have {d}")
    if cfg.median_threshold == "auto":
        M = math.sqrt(2.0 * math.log(d) / d)
    else:
        M = float(cfg.median_threshold)
    q = analytic_critical_value(d, cfg.alpha)
    t = q if critical is None else float(critical)
    return Thresholds(M=M, q_tilde=q, D_plus=t, D_minus=t, D_pm=t + cfg.r_q * M)


def median_mid(values: Sequence[float]) -> float:
    """Median; even lengths take the midpoint of the two central values."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if n == 0:
        raise RdbError("median of an empty vector")
    if n % 2:
        return float(v[n // 2])
    lo, hi = v[n // 2 - 1], v[n // 2]
    if lo == hi:
        return float(lo)
    if np.isinf(lo) and np.isinf(hi):
        return 0.0
    return float(lo / 2.0 + hi / 2.0)


def decide_direction(median: float, M: float) -> Direction:
    if median >= M:
        return Direction.NEG_ONLY
    if median <= -M:
        return Direction.POS_ONLY
    return Direction.TWO_SIDED


def select_rejections(stats: np.ndarray, direction: Direction, th: Thresholds) -> np.ndarray:
    """Positions (into ``stats``) rejected under ``direction``."""
    stats = np.asarray(stats, dtype=float)
    if direction is Direction.TWO_SIDED:
        mask = np.abs(stats) > th.D_pm
    elif direction is Direction.NEG_ONLY:
        mask = stats < -th.D_minus
    else:
        mask = stats > th.D_plus
    return np.flatnonzero(mask)


def _ratio_with_sentinel(num: np.ndarray, var: np.ndarray) -> np.ndarray:
    den = np.sqrt(var)
    out = np.zeros_like(num)
    pos = den > 0
    out[pos] = num[pos] / den[pos]
    flat = ~pos & (np.abs(num) > ZERO_DIFF_TOL)
    out[flat] = np.copysign(np.inf, num[flat])
    return out


def _group_moments(g: np.ndarray, weights: Optional[np.ndarray] = None):
    """Per-component mean and dispersion of one group's proportions."""
    const = np.ptp(g, axis=0) == 0
    if weights is None:
        mean = g.mean(axis=0)
        disp = g.var(axis=0, ddof=1) / g.shape[0]
    else:
        mean = weights @ g
        disp = (weights ** 2) @ (g - mean) ** 2
    mean[const] = g[0, const]
    disp[const] = 0.0
    return mean, disp


class TwoSampleStatistic:
    """Welch-type statistic after renormalizing group means to the active set."""

    def __init__(self, design: TwoSampleDesign, w1: Optional[np.ndarray] = None,
                 w2: Optional[np.ndarray] = None):
        self.design = design
        self.mean1, self.disp1 = _group_moments(design.group1, w1)
        self.mean2, self.disp2 = _group_moments(design.group2, w2)

    def active_sums(self, active: np.ndarray) -> tuple[float, float]:
        # fsum: exact, so the statistic does not depend on component order
        s1 = math.fsum(self.mean1[active])
        s2 = math.fsum(self.mean2[active])
        for k, s in ((1, s1), (2, s2)):
            if not s > 0:
                raise DegenerateDesignError(f"active set vanishes in group {k}")
        return s1, s2

    def differences(self, active: np.ndarray) -> np.ndarray:
        s1, s2 = self.active_sums(active)
        return self.mean1[active] / s1 - self.mean2[active] / s2

    def __call__(self, active: np.ndarray) -> np.ndarray:
        active = np.asarray(active, dtype=int)
        s1, s2 = self.active_sums(active)
        num = self.mean1[active] / s1 - self.mean2[active] / s2
        var = self.disp1[active] / (s1 * s1) + self.disp2[active] / (s2 * s2)
        return _ratio_with_sentinel(num, var)


def renormalized_stats(design: TwoSampleDesign, active: Sequence[int]) -> np.ndarray:
    active = np.asarray(active, dtype=int)
    if active.size == 0:
        raise RdbError("active set is empty")
    return TwoSampleStatistic(design)(active)


@dataclass
class ComponentResult:
    component_id: str
    decision: str  # rejected | retained | excluded
    rejection_iteration: Optional[int] = None
    direction: Optional[str] = None  # "+", "-" or "two-sided" for rejections
    first_iteration_statistic: Optional[float] = None
    note: str = ""


@dataclass
class IterationTrace:
    iteration: int
    direction: Direction
    median: float
    thresholds: Thresholds
    active: np.ndarray
    statistics: np.ndarray
    rejected: np.ndarray  # component positions rejected at this iteration


@dataclass
class TestOutcome:
    components: list[ComponentResult]
    trace: list[IterationTrace]
    config: RdbConfig
    thresholds: Thresholds
    total_iterations: int
    extras: dict[str, Any] = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    @property
    def rejected_ids(self) -> list[str]:
        return [c.component_id for c in self.components if c.decision == "rejected"]

    @property
    def retained_ids(self) -> list[str]:
        return [c.component_id for c in self.components if c.decision == "retained"]

    def record(self, component_id: str) -> ComponentResult:
        for c in self.components:
            if c.component_id == component_id:
                return c
        raise KeyError(component_id)


_REJECTION_SIGN = {Direction.NEG_ONLY: "-", Direction.POS_ONLY: "+", Direction.TWO_SIDED: "two-sided"}


def iterate(engine: StatEngine, d: int, th: Thresholds) -> list[IterationTrace]:
    """Run the renormalize/direct/test loop until nothing new is rejected."""
    active = np.arange(d)
    trace: list[IterationTrace] = []
    t = 0
    while True:
        stats = np.asarray(engine(active), dtype=float)
        med = median_mid(stats)
        direction = decide_direction(med, th.M)
        hit = select_rejections(stats, direction, th)
        trace.append(IterationTrace(t, direction, med, th, active, stats, active[hit]))
        if hit.size == 0 or hit.size == active.size:
            # an emptied active set has no median to test against
            break
        active = np.delete(active, hit)
        t += 1
    return trace


def count_rejections(engine: StatEngine, d: int, th: Thresholds) -> int:
    return sum(tr.rejected.size for tr in iterate(engine, d, th))


def resolve_critical_value(engine: StatEngine, d: int, cfg: RdbConfig,
                           first_stats: Optional[np.ndarray] = None) -> tuple[float, dict[str, Any]]:
    """Critical value T for D+/D- (q_tilde in FWER mode, searched in FDR mode)."""
    base = default_thresholds(d, cfg)
    if cfg.mode is Mode.FWER:
        return base.q_tilde, {}
    if first_stats is None:
        first_stats = engine(np.arange(d))

    def n_rejected_at(t: float) -> int:
        return count_rejections(engine, d, default_thresholds(d, cfg, critical=t))

    t_hat, evaluated = search_fdr_threshold(
        n_rejected_at, first_stats, d, cfg.alpha, base.q_tilde, cfg.fdr_tail)
    return t_hat, {"fdr_T_hat": t_hat, "fdr_fallback": t_hat == base.q_tilde,
                   "fdr_candidates": evaluated}


def run_engine(engine: StatEngine, component_ids: Sequence[str], cfg: RdbConfig,
               excluded: Sequence[tuple[str, str]] = (), extras: Optional[dict] = None) -> TestOutcome:
    d = len(component_ids)
    first_stats = np.asarray(engine(np.arange(d)), dtype=float)
    critical, info = resolve_critical_value(engine, d, cfg, first_stats)
    th = default_thresholds(d, cfg, critical=critical)
    trace = iterate(engine, d, th)

    records = [ComponentResult(cid, "retained", first_iteration_statistic=float(first_stats[i]))
               for i, cid in enumerate(component_ids)]
    for tr in trace:
        for pos in tr.rejected:
            rec = records[pos]
            rec.decision = "rejected"
            rec.rejection_iteration = tr.iteration
            rec.direction = _REJECTION_SIGN[tr.direction]
    records.extend(ComponentResult(cid, "excluded", note=reason) for cid, reason in excluded)
    out_extras = dict(info)
    if extras:
        out_extras.update(extras)
    return TestOutcome(records, trace, cfg, th, len(trace), out_extras)


def rdb_iterate(design: TwoSampleDesign, cfg: RdbConfig = RdbConfig()) -> TestOutcome:
    """RDB test on a two-sample design (FWER or FDR mode per ``cfg``)."""
    return run_engine(TwoSampleStatistic(design), design.component_ids, cfg, design.excluded,
                      {"group_labels": list(design.group_labels)})


@dataclass(frozen=True)
class NoiselessResult:
    I0_hat: frozenset[int]
    I1_hat: frozenset[int]
    T: int
    medians: tuple[float, ...]
    differences: tuple[np.ndarray, ...]


def _check_simplex(q: np.ndarray, name: str) -> None:
    if q.ndim != 1 or (q < 0).any() or not np.isfinite(q).all():
        raise RdbError(f"{name} must be a non-negative finite vector")
    if abs(math.fsum(q) - 1.0) > 1e-9:
        raise RdbError(f"{name} must sum to 1 (sums to {math.fsum(q)})")


def rdb_oracle_noiseless(Q1: Sequence[float], Q2: Sequence[float]) -> NoiselessResult:
    """Exact sign-of-median recursion on known population proportions."""
    q1 = np.asarray(Q1, dtype=float)
    q2 = np.asarray(Q2, dtype=float)
    _check_simplex(q1, "Q1")
    _check_simplex(q2, "Q2")
    if q1.shape != q2.shape:
        raise RdbError("Q1 and Q2 must have the same length")
    if ((q1 + q2) <= 0).any():
        raise RdbError("every component needs Q1_i + Q2_i > 0")

    active = np.arange(q1.size)
    medians, diffs = [], []
    while True:
        s1, s2 = math.fsum(q1[active]), math.fsum(q2[active])
        if s1 <= 0 or s2 <= 0:
            raise DegenerateDesignError("active set vanishes in one population")
        a, b = q1[active] / s1, q2[active] / s2
        r = a - b
        r[np.abs(r) <= ORACLE_ZERO_TOL * np.maximum(a, b)] = 0.0
        med = median_mid(r)
        v = np.sort(r)
        central = np.abs(v[(v.size - 1) // 2: v.size // 2 + 1]).max()
        if abs(med) <= ORACLE_ZERO_TOL * central:
            med = 0.0
        medians.append(med)
        diffs.append(r)
        if med == 0.0:
            hit = r != 0.0
        elif med > 0:
            hit = r <= 0.0
        else:
            hit = r >= 0.0
        if not hit.any() or hit.all():
            break
        active = active[~hit]
    I0 = frozenset(int(i) for i in active) if not hit.all() else frozenset()
    I1 = frozenset(range(q1.size)) - I0
    return NoiselessResult(I0, I1, len(medians), tuple(medians), tuple(diffs))
