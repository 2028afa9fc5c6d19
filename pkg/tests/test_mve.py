import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ptree.mve import (SDF_GAMMAS, DegeneratePortfolioError, FactorSet, FactorSource,
                       LEAF_GAMMA, SdfSolution, SingularSystemError, annualized_sharpe,
                       criterion_value, pricing_error, ridge_mve_weights, sample_moments,
                       sdf_ridge_weights)


def test_moments_constant_column():
    m = sample_moments(np.array([[1.0], [1.0]]))
    assert m["mean"][0] == 1 and m["second_moment"][0, 0] == 1 and m["covariance"][0, 0] == 0


def test_moments_two_by_two():
    m = sample_moments(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    np.testing.assert_allclose(m["mean"], [0, 0])
    np.testing.assert_allclose(m["covariance"], [[1, -1], [-1, 1]])


def test_moments_single_period():
    m = sample_moments(np.array([[2.0]]), covariance=False)
    assert m["mean"][0] == 2 and m["second_moment"][0, 0] == 4
    with pytest.raises(ValueError):
        sample_moments(np.array([[2.0]]))


def test_ridge_scalar_example():
    sol = ridge_mve_weights(np.array([0.01, 0.03]), gamma=0.0)
    np.testing.assert_allclose(sol.weights, [1.0])
    # mean 0.02, sample std sqrt(2) * 0.01.
    assert sol.sharpe_per_period == pytest.approx(1.41421356, rel=1e-8)
    assert sol.sharpe_annualized == pytest.approx(4.89897949, rel=1e-8)


def test_ridge_identical_columns_symmetric():
    rng = np.random.default_rng(1)
    x = 0.01 + 0.05 * rng.standard_normal(50)
    sol = ridge_mve_weights(np.column_stack([x, x]), gamma=1e-4)
    np.testing.assert_allclose(sol.weights, [0.5, 0.5], atol=1e-12)


def test_ridge_errors_and_default_gamma():
    assert LEAF_GAMMA == 1e-4
    with pytest.raises(SingularSystemError, match="shrinkage"):
        ridge_mve_weights(np.array([[0.01, 0.01], [0.02, 0.02]]), gamma=0.0)
    with pytest.raises(DegeneratePortfolioError):
        ridge_mve_weights(np.array([[0.01], [-0.01]]), gamma=1e-4)


def test_criterion_scalar_example():
    # mean 0.03, population std 0.01.
    assert criterion_value(np.array([0.02, 0.04])) == pytest.approx(3.0, rel=1e-12)


def test_criterion_duplicate_columns():
    rng = np.random.default_rng(2)
    x = 0.01 + 0.03 * rng.standard_normal(100)
    assert criterion_value(np.column_stack([x, x]), epsilon=1e-10) == pytest.approx(
        criterion_value(x), abs=1e-4)


def test_criterion_zero_variance():
    with pytest.raises(SingularSystemError):
        criterion_value(np.array([0.01, 0.01, 0.01]), epsilon=0.0)


def test_sdf_examples():
    np.testing.assert_allclose(sdf_ridge_weights(np.array([1.0, 1.0]), 0.0).weights, [1.0])
    rng = np.random.default_rng(3)
    R = 0.01 + 0.05 * rng.standard_normal((60, 4))
    sol = sdf_ridge_weights(R, 1e6)
    np.testing.assert_allclose(sol.weights, R.mean(axis=0) / 1e6, rtol=1e-3)
    assert sol.complexity == pytest.approx(4 / 60)
    assert SDF_GAMMAS == (1e-5, 1e-1, 1.0, 10.0, 1e3)


def test_pricing_error_examples():
    R = np.array([[0.5], [0.25]])
    assert pricing_error(SdfSolution(np.array([0.0]), 0.0, 0.5), R) == 1.0
    assert pricing_error(SdfSolution(np.array([2.0]), 0.0, 0.5), R) == pytest.approx(0.125)
    assert pricing_error(SdfSolution(np.array([1.0]), 0.0, 0.5), np.ones((3, 1))) == 0.0
    with pytest.raises(ValueError):
        pricing_error(SdfSolution(np.array([1.0, 2.0]), 0.0, 1.0), R)


def test_annualized_sharpe_examples():
    assert annualized_sharpe(np.array([0.01, 0.03]), 12) == pytest.approx(4.89898, rel=1e-5)
    # [-a, a] has sample std a * sqrt(2); a = 1 / sqrt(2) gives per-period Sharpe 0.5.
    a = 1 / np.sqrt(2)
    assert annualized_sharpe(0.5 + np.array([-a, a])) == pytest.approx(0.5 * np.sqrt(12))
    with pytest.raises(ValueError):
        annualized_sharpe(np.full(5, 0.01))


def test_factor_set_append_and_prefix():
    fs = FactorSet.empty(3)
    fs = fs.append(np.array([1.0, 2.0, 3.0]), FactorSource("a"))
    fs = fs.append(np.array([0.0, 1.0, 0.0]), FactorSource("b"))
    assert fs.n_factors == 2 and fs.labels == ["a", "b"]
    assert fs.prefix(1).labels == ["a"]
    with pytest.raises(ValueError):
        fs.append(np.ones(4), FactorSource("c"))


# -- properties ---------------------------------------------------------------

returns = arrays(np.float64, st.tuples(st.integers(6, 40), st.integers(1, 5)),
                 elements=st.floats(-0.2, 0.2))


def _ok(R):
    return np.linalg.matrix_rank(R) == R.shape[1] and np.abs(R.mean(axis=0)).max() > 1e-6


@given(returns, st.sampled_from([1e-6, 1e-4, 1e-2, 1.0]))
def test_mve_solve_residual(R, gamma):
    m = sample_moments(R, covariance=False)
    if np.abs(m["mean"]).max() == 0:
        return
    sol = ridge_mve_weights(R, gamma)
    res = (m["second_moment"] + gamma * np.eye(R.shape[1])) @ sol.raw_weights - m["mean"]
    assert np.abs(res).max() <= 1e-10 * (1 + np.abs(m["mean"]).max())
    assert np.abs(sol.weights).sum() == pytest.approx(1.0)


@given(returns, st.sampled_from([1e-5, 1e-1, 1.0, 1e3]))
def test_sdf_matches_ridge_regression_of_one(R, gamma):
    T, P = R.shape
    w = sdf_ridge_weights(R, gamma).weights
    # Ridge regression of 1 on R with penalty gamma * T.
    ref = np.linalg.solve(R.T @ R + gamma * T * np.eye(P), R.T @ np.ones(T))
    np.testing.assert_allclose(w, ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


@given(returns, st.floats(0.1, 10.0))
def test_criterion_scale_invariant(R, c):
    cov = np.atleast_2d(np.cov(R.T, bias=True))
    if not _ok(R) or np.linalg.eigvalsh(cov).min() < 1e-6:
        return
    a = criterion_value(R, epsilon=0.0)
    b = criterion_value(c * R, epsilon=0.0)
    assert b == pytest.approx(a, rel=1e-8, abs=1e-10)


@given(returns, st.floats(0.1, 10.0))
def test_mve_scale_at_zero_gamma(R, c):
    if not _ok(R) or np.linalg.cond(R.T @ R) > 1e8:
        return
    s1 = ridge_mve_weights(R, 0.0)
    s2 = ridge_mve_weights(c * R, 0.0)
    np.testing.assert_allclose(s2.raw_weights, s1.raw_weights / c, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(s2.weights, s1.weights, rtol=1e-7, atol=1e-12)


@given(arrays(np.float64, st.integers(3, 40), elements=st.floats(0.001, 0.1)))
def test_criterion_single_factor_is_mean_over_pop_std(x):
    if x.std() < 1e-6:
        return
    assert criterion_value(x) == pytest.approx(x.mean() / x.std(), rel=1e-10)


@given(returns, st.randoms(use_true_random=False))
def test_pricing_error_permutation(R, rnd):
    w = np.linspace(-1, 2, R.shape[1])
    perm = list(range(R.shape[1]))
    rnd.shuffle(perm)
    a = pricing_error(SdfSolution(w, 0.0, 0.0), R)
    b = pricing_error(SdfSolution(w[perm], 0.0, 0.0), R[:, perm])
    assert b == pytest.approx(a, rel=1e-12)
