"""Off-the-shelf comparison tests: Welch t on proportions, Wilcoxon rank sum
on raw counts or proportions, each with Bonferroni or BH adjustment."""

from __future__ import annotations

import numpy as np
from scipy import stats

from ..error_control import bh_adjust, bonferroni


def welch_pvalues(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Two-sided Welch p-values per column (Welch-Satterthwaite df)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        p = stats.ttest_ind(x1, x2, axis=0, equal_var=False).pvalue
    return np.nan_to_num(np.asarray(p, dtype=float), nan=1.0)


def wilcoxon_pvalues(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Two-sided rank-sum p-values, normal approximation with tie correction."""
    with np.errstate(divide="ignore", invalid="ignore"):
        p = stats.mannwhitneyu(x1, x2, axis=0, alternative="two-sided",
                               method="asymptotic", use_continuity=True).pvalue
    return np.nan_to_num(np.asarray(p, dtype=float), nan=1.0)


def reject(pvals: np.ndarray, alpha: float, adjust: str) -> np.ndarray:
    adj = bonferroni(pvals) if adjust == "bonferroni" else bh_adjust(pvals)
    return np.flatnonzero(adj <= alpha)
