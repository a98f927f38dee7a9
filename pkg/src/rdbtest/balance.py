"""Calibration weights and the covariate-balanced RDB test.

Weights are an exponential tilt of the uniform weights: w_j is
proportional to exp(lambda . (x_j - target)), with lambda minimizing the
convex dual G(lambda) = log sum_j exp(lambda . (x_j - target)). At the
minimum the weighted covariate mean equals the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import RdbConfig, TestOutcome, TwoSampleStatistic, run_engine
from .data import SampleMetadata, TwoSampleDesign, _read_tsv
from .exceptions import ConvergenceError, DataFormatError, RdbError

GRAD_TOL = 1e-8
MAX_NEWTON_ITER = 100
ARMIJO_C = 1e-4
# below this Newton decrement the dual change is under float resolution, so
# Armijo cannot be checked; the full step is safe that close to the optimum
FULL_STEP_DECREMENT = 1e-10


@dataclass
class SolverReport:
    iterations: int
    final_gradient_norm: float
    balance_residual: float
    dual_values: list[float] = field(default_factory=list)
    dropped_columns: list[str] = field(default_factory=list)


@dataclass
class CalibrationResult:
    weights: np.ndarray
    report: SolverReport


@dataclass
class BalanceWeights:
    w1: np.ndarray
    w2: np.ndarray
    report1: Optional[SolverReport] = None
    report2: Optional[SolverReport] = None

    def __post_init__(self):
        for k, w in ((1, self.w1), (2, self.w2)):
            w = np.asarray(w, dtype=float)
            if w.ndim != 1 or not (w > 0).all() or not np.isfinite(w).all():
                raise RdbError(f"group {k} weights must be finite and strictly positive")
            if abs(w.sum() - 1.0) > 1e-12:
                raise RdbError(f"group {k} weights must sum to 1 (sum {w.sum()!r})")

    @classmethod
    def normalized(cls, w1, w2, report1=None, report2=None) -> "BalanceWeights":
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        return cls(w1 / w1.sum(), w2 / w2.sum(), report1, report2)

    @property
    def balance_residual(self) -> float:
        rs = [r.balance_residual for r in (self.report1, self.report2) if r is not None]
        return max(rs) if rs else 0.0

    def as_dict(self) -> dict:
        out = {"w1": self.w1.tolist(), "w2": self.w2.tolist()}
        for k, r in (("report1", self.report1), ("report2", self.report2)):
            if r is not None:
                out[k] = {"iterations": r.iterations,
                          "final_gradient_norm": r.final_gradient_norm,
                          "balance_residual": r.balance_residual,
                          "dropped_columns": r.dropped_columns}
        return out


def _collinear_groups(z: np.ndarray, names: Sequence[str]) -> list[str]:
    centered = z - z.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=True)
    tol = max(centered.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    if rank == z.shape[1]:
        return []
    null = vt[rank:]
    involved = np.flatnonzero((np.abs(null) > 1e-8).any(axis=0))
    return [names[i] for i in involved]


def calibration_weights(
    X: np.ndarray,
    target: np.ndarray,
    center: Optional[np.ndarray] = None,
    scale: Optional[np.ndarray] = None,
    names: Optional[Sequence[str]] = None,
) -> CalibrationResult:
    """Exponential-tilting weights whose weighted mean of ``X`` rows hits ``target``.

    Columns are standardized by ``center``/``scale`` (default: the column
    mean and standard deviation of ``X``) before solving by damped Newton.

    Raises:
      ConvergenceError: the target lies outside the convex hull of the rows.
      RdbError: collinear covariate columns.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and np.ndim(target) == 1 and X.shape[1] != len(target):
        X = X.T
    m, p = X.shape
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if target.shape != (p,):
        raise RdbError(f"target has length {target.size}, expected {p}")
    names = list(names) if names is not None else [f"x{c + 1}" for c in range(p)]
    if center is None:
        center = X.mean(axis=0)
    if scale is None:
        scale = X.std(axis=0)
    center = np.asarray(center, dtype=float)
    scale = np.where(np.asarray(scale, dtype=float) > 0, scale, 1.0)

    z = (X - target) / scale
    keep, dropped = [], []
    for c in range(p):
        col = z[:, c]
        if np.ptp(X[:, c]) == 0:
            if np.abs(col).max() <= 1e-12:
                dropped.append(names[c])
                continue
            raise ConvergenceError(
                f"cannot balance covariate {names[c]}: constant at {X[0, c]:g}, target {target[c]:g}")
        keep.append(c)
    z = z[:, keep]
    kept_names = [names[c] for c in keep]
    if keep:
        bad = _collinear_groups(z, kept_names)
        if bad:
            raise RdbError(f"collinear covariate columns: {', '.join(bad)}")

    lam = np.zeros(len(keep))

    def dual(l):
        return float(logsumexp(z @ l)) - np.log(m)

    g_val = dual(lam)
    duals = [g_val]
    iters = 0
    while True:
        logw = z @ lam
        w = np.exp(logw - logsumexp(logw))
        grad = w @ z
        gnorm = float(np.abs(grad).max()) if grad.size else 0.0
        if gnorm <= GRAD_TOL or iters >= MAX_NEWTON_ITER:
            break
        hess = (z * w[:, None]).T @ z - np.outer(grad, grad)
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        if not slope < 0:
            step, slope = -grad, -float(grad @ grad)
        t = 1.0
        while True:
            cand = lam + t * step
            g_new = dual(cand)
            if -slope <= FULL_STEP_DECREMENT:
                break
            if g_new <= g_val + ARMIJO_C * t * slope or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and g_new > g_val:
            break
        lam, g_val = cand, g_new
        duals.append(g_val)
        iters += 1

    residual_z = grad if grad.size else np.zeros(0)
    if gnorm > GRAD_TOL:
        worst = int(np.argmax(np.abs(residual_z)))
        raise ConvergenceError(
            f"calibration did not converge after {iters} Newton steps; "
            f"covariate {kept_names[worst]} is worst balanced "
            f"(target likely outside the convex hull of the samples)")
    residual = np.abs(w @ X - target)
    return CalibrationResult(
        w, SolverReport(iters, gnorm, float(residual.max()) if p else 0.0, duals, dropped))


class WeightedStatistic(TwoSampleStatistic):
    """Weighted two-sample statistic with a squared-weight variance estimate."""

    def __init__(self, design: TwoSampleDesign, weights: BalanceWeights):
        if weights.w1.size != design.m1 or weights.w2.size != design.m2:
            raise RdbError("weight vectors do not match group sizes")
        super().__init__(design, weights.w1, weights.w2)


def weighted_stats(design: TwoSampleDesign, w: BalanceWeights, active: Sequence[int]) -> np.ndarray:
    return WeightedStatistic(design, w)(np.asarray(active, dtype=int))


def balance_groups(X1: np.ndarray, X2: np.ndarray, names: Optional[Sequence[str]] = None) -> BalanceWeights:
    """Tilt each group to the pooled covariate mean, standardizing on the pooled sample."""
    X1 = np.asarray(X1, dtype=float).reshape(len(X1), -1)
    X2 = np.asarray(X2, dtype=float).reshape(len(X2), -1)
    m1, m2 = X1.shape[0], X2.shape[0]
    if X1.shape[1] == 0:
        return BalanceWeights(np.full(m1, 1.0 / m1), np.full(m2, 1.0 / m2))
    pooled = np.vstack([X1, X2])
    target = pooled.mean(axis=0)
    center, scale = target, pooled.std(axis=0)
    r1 = calibration_weights(X1, target, center, scale, names)
    r2 = calibration_weights(X2, target, center, scale, names)
    return BalanceWeights(r1.weights, r2.weights, r1.report, r2.report)


def covariates_for(design: TwoSampleDesign, meta: SampleMetadata, columns: Sequence[str]):
    """Covariate matrices (group 1, group 2) for the named metadata columns."""
    m1 = meta.aligned_to(design.sample_ids1)
    m2 = meta.aligned_to(design.sample_ids2)
    X1 = np.column_stack([m1.numeric(c) for c in columns]) if columns else np.zeros((design.m1, 0))
    X2 = np.column_stack([m2.numeric(c) for c in columns]) if columns else np.zeros((design.m2, 0))
    return X1, X2


def rdb_weighted(design: TwoSampleDesign, X1: np.ndarray, X2: np.ndarray,
                 cfg: RdbConfig = RdbConfig(), names: Optional[Sequence[str]] = None,
                 weights: Optional[BalanceWeights] = None) -> TestOutcome:
    """RDB with calibration-weighted statistics.

    Pass ``weights`` to skip the solver and use externally estimated weights.
    """
    if weights is None:
        weights = balance_groups(X1, X2, names)
    extras = {"group_labels": list(design.group_labels), "balance_weights": weights}
    return run_engine(WeightedStatistic(design, weights), design.component_ids, cfg,
                      design.excluded, extras)


def load_weights(path, design: TwoSampleDesign) -> BalanceWeights:
    """Read a (sample_id, weight) TSV; weights are normalized within each group."""
    path = Path(path)
    rows = _read_tsv(path)
    if not rows or [c.strip() for c in rows[0][:2]] != ["sample_id", "weight"]:
        raise DataFormatError(f"{path}: header must be 'sample_id<TAB>weight'")
    table: dict[str, float] = {}
    for line, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise DataFormatError(f"{path}: line {line} needs 2 fields")
        sid = row[0].strip()
        try:
            w = float(row[1])
        except ValueError:
            raise DataFormatError(f"{path}: non-numeric weight at line {line}") from None
        if not w > 0 or not np.isfinite(w):
            raise DataFormatError(f"{path}: weight for sample {sid} must be positive")
        if sid in table:
            raise DataFormatError(f"{path}: duplicate sample id {sid!r}")
        table[sid] = w
    out = []
    for ids in (design.sample_ids1, design.sample_ids2):
        missing = [s for s in ids if s not in table]
        if missing:
            raise RdbError(f"missing weight for sample {missing[0]}")
        out.append(np.array([table[s] for s in ids]))
    return BalanceWeights.normalized(*out)
