"""Benchmark data generators: Poisson-Gamma, log-normal (AR(1)), log-normal
with confounding covariates, and real-data shuffling.

Each replicate draws from independent streams keyed by (seed, replicate,
role), so a replicate can be replayed on its own and results do not depend
on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from ..data import CountMatrix
from ..exceptions import RdbError

ROLES = ("effects", "abundance", "depth", "multinomial", "covariates", "labels")

# (share, value) categories; the last category takes the rounding remainder
GAMMA_LEVELS = ((0.6, 50.0), (0.3, 200.0), (0.1, 10000.0))
LOGMEAN_LEVELS = ((0.6, 3.0), (0.3, 5.0), (0.1, 10.0))
AMPLITUDE_LEVELS = ((0.6, 1.0), (0.3, 2.0), (0.1, 3.0))
N_COVARIATES = 5


class ScenarioKind(str, Enum):
    POISSON_GAMMA = "pg"
    POISSON_GAMMA_CONTINUOUS = "pg-continuous"
    LOG_NORMAL = "lognormal"
    LOG_NORMAL_COV = "lognormal-cov"
    SHUFFLE = "shuffle"


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind
    d: int = 200
    s: int = 20
    m1: int = 50
    m2: int = 50
    effect_setting: int = 1
    beta: float = 1.0
    rho: float = 0.0
    eta: float = 0.25
    depth_range: tuple[int, int] = (5000, 50000)
    seed: int = 0
    source_counts: Optional[CountMatrix] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        kind = ScenarioKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ScenarioKind.SHUFFLE:
            if self.source_counts is None:
                raise RdbError("shuffle scenario needs source counts")
            object.__setattr__(self, "d", self.source_counts.d)
            object.__setattr__(self, "s", 0)
            if self.m1 + self.m2 > self.source_counts.n:
                raise RdbError(
                    f"m1 + m2 = {self.m1 + self.m2} exceeds the {self.source_counts.n} source samples")
        if self.d < 2:
            raise RdbError("d must be at least 2")
        if self.s < 0 or self.s > self.d / 2 - 1:
            raise RdbError(
                f"s = {self.s} violates the identifiability constraint s <= d/2 - 1 "
                f"(= {self.d / 2 - 1:g}); the reference set must exceed half the components")
        if self.effect_setting not in (1, 2):
            raise RdbError("effect setting must be 1 or 2")
        if not self.beta >= 1:
            raise RdbError("beta must be >= 1")
        if not 0 <= self.rho < 1:
            raise RdbError("rho must lie in [0, 1)")
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            raise RdbError("depth range must satisfy 0 < low <= high")
        if kind is ScenarioKind.POISSON_GAMMA_CONTINUOUS:
            if self.m1 < 3:
                raise RdbError("continuous scenario needs m1 >= 3 samples")
        elif self.m1 < 2 or self.m2 < 2:
            raise RdbError("each group needs at least 2 samples")

    def as_dict(self) -> dict:
        out = {
            "kind": self.kind.value, "d": self.d, "s": self.s, "m1": self.m1, "m2": self.m2,
            "effect_setting": self.effect_setting, "beta": self.beta, "rho": self.rho,
            "eta": self.eta, "depth_range": list(self.depth_range), "seed": self.seed,
        }
        if self.source_counts is not None:
            out["source_shape"] = [self.source_counts.d, self.source_counts.n]
        return out


@dataclass(frozen=True)
class GroundTruth:
    I1: frozenset[int]
    effect_sizes: np.ndarray


@dataclass
class SimulatedData:
    counts: CountMatrix
    labels: Optional[np.ndarray]  # "g1"/"g2" per sample, None for continuous outcome
    truth: GroundTruth
    covariates: Optional[np.ndarray] = None  # samples x 5
    outcome: Optional[np.ndarray] = None


class ReplicateStreams:
    """Lazily created generators, one per role, keyed by (seed, replicate, role)."""

    def __init__(self, seed: int, replicate: int):
        self.seed = int(seed)
        self.replicate = int(replicate)
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, role: str) -> np.random.Generator:
        if role not in self._cache:
            ss = np.random.SeedSequence(self.seed, spawn_key=(self.replicate, ROLES.index(role)))
            self._cache[role] = np.random.default_rng(ss)
        return self._cache[role]


RngLike = Union[np.random.Generator, ReplicateStreams]


def _rng(rngs: RngLike, role: str) -> np.random.Generator:
    if isinstance(rngs, np.random.Generator):
        return rngs
    return rngs[role]


def category_vector(d: int, levels, rng: np.random.Generator) -> np.ndarray:
    """Values at the given shares (floor-rounded, remainder to the last level), shuffled."""
    counts = [math.floor(share * d) for share, _ in levels[:-1]]
    counts.append(d - sum(counts))
    vec = np.concatenate([np.full(n, v) for n, (_, v) in zip(counts, levels)])
    return rng.permutation(vec)


def gen_effect_sizes(d: int, s: int, setting: int, rng: RngLike) -> GroundTruth:
    if not 0 <= s <= d:
        raise RdbError("need 0 <= s <= d")
    g = _rng(rng, "effects")
    a = np.ones(d)
    planted = g.choice(d, size=s, replace=False) if s else np.array([], dtype=int)
    if setting == 1:
        a[planted] = g.uniform(1.0, 5.0, size=s)
    elif setting == 2:
        up = math.ceil(s / 2)
        a[planted[:up]] = g.uniform(1.0, 5.0, size=up)
        a[planted[up:]] = g.uniform(0.2, 1.0, size=s - up)
    else:
        raise RdbError("effect setting must be 1 or 2")
    return GroundTruth(frozenset(int(i) for i in planted), a)


def _depths(sc: Scenario, m: int, rng: np.random.Generator, beta: float = 1.0) -> np.ndarray:
    lo, hi = sc.depth_range
    lo_b, hi_b = math.ceil(lo / beta), math.floor(hi / beta)
    return rng.integers(lo_b, max(lo_b, hi_b), size=m, endpoint=True)


def _multinomial_readout(A: np.ndarray, depth: np.ndarray, rng: np.random.Generator,
                         redraw=None) -> np.ndarray:
    """Counts (samples x d) from absolute abundances via Multinomial(N*, A / sum A)."""
    A = np.asarray(A, dtype=float)
    tot = A.sum(axis=1)
    bad = np.flatnonzero(tot <= 0)
    if bad.size and redraw is not None:
        A[bad] = redraw(bad)
        tot = A.sum(axis=1)
        bad = np.flatnonzero(tot <= 0)
    if bad.size:
        raise RdbError(f"sample {bad[0] + 1} has zero total absolute abundance after resampling")
    return rng.multinomial(depth, A / tot[:, None])


def _two_group_counts(counts1: np.ndarray, counts2: np.ndarray) -> tuple[CountMatrix, np.ndarray]:
    m1, m2 = counts1.shape[0], counts2.shape[0]
    d = counts1.shape[1]
    mat = np.vstack([counts1, counts2]).T
    cm = CountMatrix(tuple(f"c{i + 1}" for i in range(d)),
                     tuple(f"s{j + 1}" for j in range(m1 + m2)), mat)
    labels = np.array(["g1"] * m1 + ["g2"] * m2)
    return cm, labels


def gen_poisson_gamma(sc: Scenario, rngs: RngLike) -> SimulatedData:
    truth = gen_effect_sizes(sc.d, sc.s, sc.effect_setting, rngs)
    ab = _rng(rngs, "abundance")
    gamma = category_vector(sc.d, GAMMA_LEVELS, ab)
    rate1, rate2 = gamma, truth.effect_sizes * gamma
    A1 = ab.poisson(rate1, size=(sc.m1, sc.d))
    A2 = ab.poisson(rate2, size=(sc.m2, sc.d))
    dep = _rng(rngs, "depth")
    n1 = _depths(sc, sc.m1, dep)
    n2 = _depths(sc, sc.m2, dep, sc.beta)
    mult = _rng(rngs, "multinomial")
    c1 = _multinomial_readout(A1, n1, mult, lambda rows: ab.poisson(rate1, size=(rows.size, sc.d)))
    c2 = _multinomial_readout(A2, n2, mult, lambda rows: ab.poisson(rate2, size=(rows.size, sc.d)))
    cm, labels = _two_group_counts(c1, c2)
    return SimulatedData(cm, labels, truth)


def gen_poisson_gamma_continuous(sc: Scenario, rngs: RngLike) -> SimulatedData:
    """Outcome Y ~ U(0, 1); A_i ~ Poisson((1 + (a_i - 1) Y) gamma_i); m1 samples."""
    truth = gen_effect_sizes(sc.d, sc.s, sc.effect_setting, rngs)
    ab = _rng(rngs, "abundance")
    gamma = category_vector(sc.d, GAMMA_LEVELS, ab)
    y = _rng(rngs, "covariates").uniform(0.0, 1.0, size=sc.m1)
    rate = (1.0 + np.outer(y, truth.effect_sizes - 1.0)) * gamma
    A = ab.poisson(rate)
    depth = _depths(sc, sc.m1, _rng(rngs, "depth"))
    counts = _multinomial_readout(A, depth, _rng(rngs, "multinomial"),
                                  lambda rows: ab.poisson(rate[rows]))
    cm = CountMatrix(tuple(f"c{i + 1}" for i in range(sc.d)),
                     tuple(f"s{j + 1}" for j in range(sc.m1)), counts.T)
    return SimulatedData(cm, None, truth, outcome=y)


def ar1_normals(m: int, d: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """m draws of a d-vector with corr(z_k, z_l) = rho^|k - l| and unit variances."""
    eps = rng.standard_normal((m, d))
    z = np.empty_like(eps)
    z[:, 0] = eps[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for col in range(1, d):
        z[:, col] = rho * z[:, col - 1] + c * eps[:, col]
    return z


def gen_lognormal(sc: Scenario, rngs: RngLike) -> SimulatedData:
    truth = gen_effect_sizes(sc.d, sc.s, sc.effect_setting, rngs)
    ab = _rng(rngs, "abundance")
    mu = category_vector(sc.d, LOGMEAN_LEVELS, ab)
    A1 = np.exp(mu + ar1_normals(sc.m1, sc.d, sc.rho, ab))
    A2 = np.exp(np.log(truth.effect_sizes) + mu + ar1_normals(sc.m2, sc.d, sc.rho, ab))
    dep = _rng(rngs, "depth")
    n1 = _depths(sc, sc.m1, dep)
    n2 = _depths(sc, sc.m2, dep, sc.beta)
    mult = _rng(rngs, "multinomial")
    cm, labels = _two_group_counts(_multinomial_readout(A1, n1, mult),
                                   _multinomial_readout(A2, n2, mult))
    return SimulatedData(cm, labels, truth)


def gen_lognormal_cov(sc: Scenario, rngs: RngLike) -> SimulatedData:
    """Abundances driven by latent covariates W that shift with the group.

    Only X = exp(W) + W is returned as the observed covariate matrix.
    """
    truth = gen_effect_sizes(sc.d, sc.s, sc.effect_setting, rngs)
    cov = _rng(rngs, "covariates")
    eta = np.full(N_COVARIATES, sc.eta)
    W1 = eta + cov.standard_normal((sc.m1, N_COVARIATES))
    W2 = -eta + cov.standard_normal((sc.m2, N_COVARIATES))
    ab = _rng(rngs, "abundance")
    lam = category_vector(sc.d, AMPLITUDE_LEVELS, ab)
    sign = ab.choice([-1.0, 1.0], size=sc.d)
    B = (sign * lam) * ab.uniform(0.0, 1.0, size=(N_COVARIATES, sc.d))
    A1 = np.exp(W1 @ B) + ab.exponential(1.0, size=(sc.m1, sc.d))
    # the global factor 2 is kept as written; it cancels in the proportions
    A2 = 2.0 * truth.effect_sizes * (np.exp(W2 @ B) + ab.exponential(1.0, size=(sc.m2, sc.d)))
    dep = _rng(rngs, "depth")
    n1 = _depths(sc, sc.m1, dep)
    n2 = _depths(sc, sc.m2, dep, sc.beta)
    mult = _rng(rngs, "multinomial")
    cm, labels = _two_group_counts(_multinomial_readout(A1, n1, mult),
                                   _multinomial_readout(A2, n2, mult))
    X = np.vstack([np.exp(W1) + W1, np.exp(W2) + W2])
    return SimulatedData(cm, labels, truth, covariates=X)


def gen_shuffle(counts: CountMatrix, m1: int, m2: int, rngs: RngLike) -> SimulatedData:
    """Draw m1 + m2 source samples without replacement and split them at random."""
    if m1 + m2 > counts.n:
        raise RdbError(f"m1 + m2 = {m1 + m2} exceeds the {counts.n} source samples")
    g = _rng(rngs, "labels")
    # choice without replacement returns a uniformly random order, so the
    # first m1 drawn form group 1
    cols = g.choice(counts.n, size=m1 + m2, replace=False)
    sub = counts.counts[:, cols]
    cm = CountMatrix(counts.component_ids, tuple(counts.sample_ids[c] for c in cols), sub)
    labels = np.array(["g1"] * m1 + ["g2"] * m2)
    truth = GroundTruth(frozenset(), np.ones(counts.d))
    return SimulatedData(cm, labels, truth)


def generate(sc: Scenario, rngs: RngLike) -> SimulatedData:
    if sc.kind is ScenarioKind.POISSON_GAMMA:
        return gen_poisson_gamma(sc, rngs)
    if sc.kind is ScenarioKind.POISSON_GAMMA_CONTINUOUS:
        return gen_poisson_gamma_continuous(sc, rngs)
    if sc.kind is ScenarioKind.LOG_NORMAL:
        return gen_lognormal(sc, rngs)
    if sc.kind is ScenarioKind.LOG_NORMAL_COV:
        return gen_lognormal_cov(sc, rngs)
    return gen_shuffle(sc.source_counts, sc.m1, sc.m2, rngs)
