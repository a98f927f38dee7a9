"""RDB for association with a continuous outcome.

Each sample is renormalized to the active set on its own (unlike the
two-sample statistic, which divides by the group-level sum of means), then
correlated with the outcome. The correlation is mapped to the usual
t-transform with m - 2 degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import RdbConfig, TestOutcome, run_engine
from .data import CompositionMatrix, SampleMetadata
from .exceptions import DegenerateDesignError, RdbError

# |r| at or above this is treated as an exact linear relation
R_EXACT = 1.0 - 1e-12


@dataclass(frozen=True)
class ContinuousDesign:
    """Samples x components proportions with one outcome value per sample."""

    props: np.ndarray
    outcome: np.ndarray
    component_ids: tuple[str, ...] = ()
    excluded: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        props = np.array(self.props, dtype=float, order="C")
        y = np.array(self.outcome, dtype=float).ravel()
        if props.ndim != 2 or props.shape[0] != y.size:
            raise RdbError("props must be samples x components with one outcome per sample")
        if y.size < 3:
            raise DegenerateDesignError("continuous outcome needs at least 3 samples")
        if not np.isfinite(y).all():
            raise RdbError("outcome contains non-finite values")
        if np.ptp(y) == 0:
            raise DegenerateDesignError("outcome has zero variance")
        ids = tuple(self.component_ids) or tuple(f"c{i + 1}" for i in range(props.shape[1]))
        if len(ids) != props.shape[1]:
            raise RdbError("component_ids length does not match the number of components")
        props.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "props", props)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "component_ids", ids)

    @property
    def m(self) -> int:
        return self.props.shape[0]

    @property
    def d(self) -> int:
        return self.props.shape[1]


class CorrelationStatistic:
    def __init__(self, data: ContinuousDesign):
        self.props = data.props
        yc = data.outcome - data.outcome.mean()
        self.yc = yc / np.sqrt(yc @ yc)
        self.m = data.m

    def renormalized(self, active: np.ndarray) -> np.ndarray:
        sub = self.props[:, active]
        sums = sub.sum(axis=1)
        if not (sums > 0).all():
            j = int(np.flatnonzero(~(sums > 0))[0])
            raise DegenerateDesignError(f"active set vanishes in sample {j + 1}")
        return sub / sums[:, None]

    def __call__(self, active: np.ndarray) -> np.ndarray:
        x = self.renormalized(np.asarray(active, dtype=int))
        const = np.ptp(x, axis=0) == 0
        xc = x - x.mean(axis=0)
        norm = np.sqrt((xc * xc).sum(axis=0))
        r = np.zeros(x.shape[1])
        ok = ~const & (norm > 0)
        r[ok] = (self.yc @ xc[:, ok]) / norm[ok]
        exact = np.abs(r) >= R_EXACT
        out = np.zeros_like(r)
        fin = ok & ~exact
        out[fin] = r[fin] * np.sqrt((self.m - 2) / (1.0 - r[fin] ** 2))
        out[exact] = np.copysign(np.inf, r[exact])
        return out


def correlation_stats(data: ContinuousDesign, active: Sequence[int]) -> np.ndarray:
    active = np.asarray(active, dtype=int)
    if active.size == 0:
        raise RdbError("active set is empty")
    return CorrelationStatistic(data)(active)


def continuous_design(p: CompositionMatrix, meta: SampleMetadata, outcome: str) -> ContinuousDesign:
    """Build a design from proportions and a numeric metadata column.

    Components with zero abundance in every sample are excluded.
    """
    meta = meta.aligned_to(p.sample_ids)
    y = meta.numeric(outcome, what="outcome")
    if p.counts is not None:
        nonzero = p.counts.sum(axis=1) > 0
    else:
        nonzero = p.props.sum(axis=1) > 0
    keep = np.flatnonzero(nonzero)
    excluded = tuple((p.component_ids[i], "all-zero") for i in np.flatnonzero(~nonzero))
    return ContinuousDesign(p.props[keep].T, y, tuple(p.component_ids[i] for i in keep), excluded)


def rdb_continuous(data: ContinuousDesign, cfg: RdbConfig = RdbConfig()) -> TestOutcome:
    return run_engine(CorrelationStatistic(data), data.component_ids, cfg, data.excluded)
