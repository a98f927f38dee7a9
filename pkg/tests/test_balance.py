import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdbtest.balance import (
    BalanceWeights,
    balance_groups,
    calibration_weights,
    covariates_for,
    load_weights,
    rdb_weighted,
    weighted_stats,
)
from rdbtest.core import RdbConfig, rdb_iterate, renormalized_stats
from rdbtest.data import SampleMetadata
from rdbtest.exceptions import ConvergenceError, RdbError

from conftest import make_design, random_design


def test_two_point_closed_form():
    # w2 / w1 = exp(lambda) and w2 = target
    res = calibration_weights(np.array([[0.0], [1.0]]), np.array([0.25]))
    np.testing.assert_allclose(res.weights, [0.75, 0.25], atol=1e-9)
    assert res.report.balance_residual <= 1e-9


def test_balanced_input_needs_no_steps():
    X = np.array([[1.0, 2.0], [3.0, 0.0], [2.0, 4.0]])
    res = calibration_weights(X, X.mean(axis=0))
    np.testing.assert_allclose(res.weights, np.full(3, 1 / 3), rtol=1e-12)
    assert res.report.iterations == 0


def test_target_outside_hull():
    with pytest.raises(ConvergenceError, match="x1"):
        calibration_weights(np.array([[0.0], [1.0]]), np.array([2.0]))


def test_constant_column_off_target():
    X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    with pytest.raises(ConvergenceError, match="age"):
        calibration_weights(X, np.array([2.0, 6.0]), names=["bmi", "age"])


def test_constant_column_on_target_is_dropped():
    X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    res = calibration_weights(X, np.array([1.5, 5.0]), names=["bmi", "age"])
    assert res.report.dropped_columns == ["age"]
    assert abs(res.weights @ X[:, 0] - 1.5) <= 1e-6


def test_collinear_columns():
    rng = np.random.default_rng(0)
    x = rng.normal(size=20)
    X = np.column_stack([x, 2 * x + 1, rng.normal(size=20)])
    with pytest.raises(RdbError, match="collinear covariate columns: a, b"):
        calibration_weights(X, X.mean(axis=0) + 0.01, names=["a", "b", "c"])


def test_dual_descent_and_tolerance():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3))
    res = calibration_weights(X, np.array([0.3, -0.2, 0.1]))
    duals = res.report.dual_values
    assert all(b <= a + 1e-15 for a, b in zip(duals, duals[1:]))
    assert res.report.final_gradient_norm <= 1e-8
    np.testing.assert_allclose(res.weights @ X, [0.3, -0.2, 0.1], atol=1e-6)


def test_weights_validation():
    with pytest.raises(RdbError, match="sum to 1"):
        BalanceWeights(np.array([0.5, 0.6]), np.array([0.5, 0.5]))
    with pytest.raises(RdbError, match="strictly positive"):
        BalanceWeights(np.array([1.0, 0.0]), np.array([0.5, 0.5]))


def test_uniform_weights_on_toy(toy_design):
    w = BalanceWeights(np.full(2, 0.5), np.full(2, 0.5))
    # variance term 0.02 / 2 per group becomes 0.01 / 2: 0.3 / sqrt(0.01) = 3
    np.testing.assert_allclose(weighted_stats(toy_design, w, [0, 1]), [3.0, -3.0], rtol=1e-12)


def test_uniform_weights_relation_to_unweighted():
    rng = np.random.default_rng(9)
    design = random_design(rng, 12, 6, 6)
    w = BalanceWeights(np.full(6, 1 / 6), np.full(6, 1 / 6))
    active = np.arange(12)
    # equal group sizes: the variance shrinks by (m - 1) / m in both terms
    np.testing.assert_allclose(weighted_stats(design, w, active),
                               renormalized_stats(design, active) * math.sqrt(6 / 5), rtol=1e-10)


def test_concentrated_weight():
    g1 = [[0.6, 0.4], [0.8, 0.2], [0.7, 0.3]]
    g2 = [[0.5, 0.5], [0.3, 0.7], [0.4, 0.6]]
    eps = 1e-9
    w = BalanceWeights.normalized([1.0, eps, eps], [1, 1, 1])
    s = weighted_stats(make_design(g1, g2), w, [0, 1])
    # group 1 contributes (almost) no spread, mean is its first sample
    var2 = sum((x - 0.4) ** 2 for x in (0.5, 0.3, 0.4)) / 9
    assert s[0] == pytest.approx((0.6 - 0.4) / math.sqrt(var2), rel=1e-6)


def test_identical_groups_weighted_zero():
    g = [[0.2, 0.5, 0.3], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]]
    w = BalanceWeights.normalized([1, 2, 3], [1, 2, 3])
    assert weighted_stats(make_design(g, g), w, [0, 1, 2]).tolist() == [0.0, 0.0, 0.0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5).filter(lambda a: abs(a) > 0.1), st.floats(-100, 100))
def test_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    X1 = rng.normal(0.3, 1.0, size=(25, 2))
    X2 = rng.normal(-0.3, 1.0, size=(30, 2))
    base = balance_groups(X1, X2)
    T = np.array([[a, 0.0], [0.0, 1.0]])
    shift = np.array([b, 0.0])
    moved = balance_groups(X1 @ T + shift, X2 @ T + shift)
    np.testing.assert_allclose(moved.w1, base.w1, atol=1e-8)
    np.testing.assert_allclose(moved.w2, base.w2, atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_post_fit_balance(seed, p):
    rng = np.random.default_rng(seed)
    X1 = rng.exponential(size=(40, p))
    X2 = rng.exponential(size=(35, p)) + 0.3
    w = balance_groups(X1, X2)
    pooled = np.vstack([X1, X2])
    target, scale = pooled.mean(axis=0), pooled.std(axis=0)
    for wk, Xk in ((w.w1, X1), (w.w2, X2)):
        assert (wk > 0).all() and abs(wk.sum() - 1) <= 1e-12
        assert (np.abs((wk @ Xk - target) / scale) <= 1e-6).all()
    assert w.balance_residual <= 1e-6


def test_no_covariates_matches_unweighted():
    rng = np.random.default_rng(12)
    design = random_design(rng, 30, 10, 10)
    out = rdb_weighted(design, np.zeros((10, 0)), np.zeros((10, 0)))
    w = out.extras["balance_weights"]
    np.testing.assert_allclose(w.w1, 0.1)
    # uniform weights only rescale statistics, by sqrt(m / (m - 1)) here
    np.testing.assert_allclose(out.trace[0].statistics,
                               rdb_iterate(design).trace[0].statistics * math.sqrt(10 / 9), rtol=1e-10)


def test_independent_covariates_rarely_change_decisions():
    """Covariates unrelated to group: weighted and unweighted agree on most replicates."""
    agree = 0
    reps = 40
    for r in range(reps):
        rng = np.random.default_rng(1000 + r)
        d, m = 30, 50
        base = rng.gamma(2.0, size=d)
        g1 = rng.gamma(base * 20, size=(m, d))
        g2 = rng.gamma(base * 20, size=(m, d))
        g2[:, :3] *= 3
        design = make_design(g1 / g1.sum(1, keepdims=True), g2 / g2.sum(1, keepdims=True))
        X1, X2 = rng.normal(size=(m, 2)), rng.normal(size=(m, 2))
        a = set(rdb_iterate(design).rejected_ids)
        b = set(rdb_weighted(design, X1, X2).rejected_ids)
        agree += a == b
    assert agree / reps >= 0.95


def test_covariates_missing_value():
    design = make_design([[0.5, 0.5], [0.4, 0.6]], [[0.3, 0.7], [0.2, 0.8]])
    design = type(design)(design.component_ids, design.group1, design.group2, (), ("A", "B"),
                          ("s1", "s2"), ("s3", "s7"))
    meta = SampleMetadata(("s1", "s2", "s3", "s7"), {"age": ("30", "41", "35", "NA")})
    with pytest.raises(RdbError, match="missing covariate age for sample s7"):
        covariates_for(design, meta, ["age"])


def test_load_weights(write_tsv):
    design = make_design([[0.5, 0.5], [0.4, 0.6]], [[0.3, 0.7], [0.2, 0.8]])
    path = write_tsv("w.tsv", "sample_id\tweight\na0\t1\na1\t3\nb0\t2\nb1\t2\n")
    w = load_weights(path, design)
    np.testing.assert_allclose(w.w1, [0.25, 0.75])
    np.testing.assert_allclose(w.w2, [0.5, 0.5])
    with pytest.raises(RdbError, match="missing weight for sample b1"):
        load_weights(write_tsv("w2.tsv", "sample_id\tweight\na0\t1\na1\t3\nb0\t2\n"), design)
    with pytest.raises(RdbError, match="positive"):
        load_weights(write_tsv("w3.tsv", "sample_id\tweight\na0\t0\na1\t3\nb0\t2\nb1\t1\n"), design)
