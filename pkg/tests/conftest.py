import numpy as np
import pytest

from rdbtest.data import TwoSampleDesign


def make_design(g1, g2, ids=None):
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    d = g1.shape[1]
    ids = tuple(ids) if ids else tuple(f"c{i + 1}" for i in range(d))
    return TwoSampleDesign(
        ids, g1, g2, (), ("A", "B"),
        tuple(f"a{j}" for j in range(len(g1))), tuple(f"b{j}" for j in range(len(g2))))


def random_design(rng, d, m1, m2, zero_frac=0.0):
    """Gamma-normalized proportions with optional exact zeros.

    Every sample and every per-group component mean stays nonzero, so no
    active set can vanish.
    """
    shape = rng.uniform(0.3, 3.0, size=d)

    def group(m):
        x = rng.gamma(shape, size=(m, d))
        if zero_frac:
            x[rng.random((m, d)) < zero_frac] = 0.0
        x[rng.integers(m, size=d), np.arange(d)] += 1e-3
        x[np.arange(m), rng.integers(d, size=m)] += 1e-3
        return x / x.sum(axis=1, keepdims=True)

    return make_design(group(m1), group(m2))


@pytest.fixture
def toy_design():
    # two components, two samples per group; closed-form statistic 0.3 / sqrt(0.02)
    return make_design([[0.6, 0.4], [0.8, 0.2]], [[0.5, 0.5], [0.3, 0.7]])


@pytest.fixture
def write_tsv(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write
