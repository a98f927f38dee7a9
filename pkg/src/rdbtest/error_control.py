"""Critical values: tail laws, the FDR threshold search, p-value adjusters."""

from __future__ import annotations

import math
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .exceptions import RdbError


class TailLaw(str, Enum):
    """Reference law of the null statistic used by the FDR plug-in.

    RAYLEIGH is the norm of a standard bivariate Gaussian; HALF_NORMAL is
    ``|z|`` and suits runs that stop after few iterations.
    """

    RAYLEIGH = "rayleigh"
    HALF_NORMAL = "halfnormal"


def survival(law: TailLaw, t: float) -> float:
    """P(Z > t) under ``law``."""
    if t < 0 or math.isnan(t):
        raise RdbError(f"survival threshold must be >= 0, got {t}")
    law = TailLaw(law)
    if math.isinf(t):
        return 0.0
    if law is TailLaw.RAYLEIGH:
        return math.exp(-0.5 * t * t)
    # 2 * (1 - Phi(t)) == erfc(t / sqrt(2)), without cancellation in the tail
    return math.erfc(t / math.sqrt(2.0))


def analytic_critical_value(d: int, alpha: float) -> float:
    """Upper bound sqrt(2 log d - 2 log alpha) of the max-Rayleigh quantile."""
    return math.sqrt(2.0 * math.log(d) - 2.0 * math.log(alpha))


def search_fdr_threshold(
    n_rejected_at: Callable[[float], int],
    first_stats: np.ndarray,
    d: int,
    alpha: float,
    q_tilde: float,
    law: TailLaw = TailLaw.RAYLEIGH,
) -> tuple[float, list[tuple[float, int]]]:
    """Smallest grid value T with d * P(Z > T) / max(|I1(T)|, 1) <= alpha.

    The grid is the first-iteration magnitudes not above ``q_tilde`` plus
    ``q_tilde`` itself. ``n_rejected_at(T)`` runs the full iterative
    procedure at critical value T. Returns ``(T_hat, evaluated)`` where
    ``evaluated`` lists the (T, |I1(T)|) pairs actually run. Falls back to
    ``q_tilde`` when nothing qualifies.
    """
    mags = np.abs(np.asarray(first_stats, dtype=float))
    grid = np.unique(np.append(mags[mags <= q_tilde], q_tilde))
    evaluated: list[tuple[float, int]] = []
    for t in grid:
        t = float(t)
        tail = survival(law, t)
        # |I1(T)| <= d, so these candidates cannot qualify
        if tail > alpha:
            continue
        k = n_rejected_at(t)
        evaluated.append((t, k))
        if d * tail / max(k, 1) <= alpha:
            return t, evaluated
    return q_tilde, evaluated


def fdr_threshold(design, cfg) -> float:
    """FDR critical value for a two-sample design (see ``search_fdr_threshold``)."""
    from . import core

    engine = core.TwoSampleStatistic(design)
    return core.resolve_critical_value(engine, design.d, cfg)[0]


def _as_pvals(pvals: Sequence[float]) -> np.ndarray:
    p = np.asarray(pvals, dtype=float).ravel()
    if p.size and (np.isnan(p).any() or (p < 0).any() or (p > 1).any()):
        raise RdbError("p-values must lie in [0, 1]")
    return p


def bonferroni(pvals: Sequence[float]) -> np.ndarray:
    p = _as_pvals(pvals)
    return np.minimum(1.0, p * p.size)


def bh_adjust(pvals: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values."""
    p = _as_pvals(pvals)
    n = p.size
    if n == 0:
        return p
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * n / np.arange(1, n + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(n)
    out[order] = np.minimum(adj, 1.0)
    return out
