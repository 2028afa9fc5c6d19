"""Moments, ridge tangency weights, the split criterion and the ridge SDF."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

LEAF_GAMMA = 1e-4
FACTOR_GAMMA = 1e-5
CRITERION_EPSILON = 1e-12
SDF_GAMMAS = (1e-5, 1e-1, 1.0, 10.0, 1e3)


class SingularSystemError(np.linalg.LinAlgError):
    """The moment system could not be solved; usually cured by positive shrinkage."""


class DegeneratePortfolioError(ValueError):
    """The solved portfolio has no nonzero weight to normalize."""


@dataclass(frozen=True, eq=False)
class ReturnMatrix:
    """T x P matrix of per-period excess returns with column labels."""

    values: np.ndarray
    column_labels: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"return matrix must be T x P with T, P >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("return matrix has non-finite entries")
        labels = tuple(self.column_labels) or tuple(f"c{j}" for j in range(v.shape[1]))
        if len(labels) != v.shape[1]:
            raise ValueError("column_labels length does not match column count")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "column_labels", labels)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FactorSource:
    source: str
    leaf_weights: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class FactorSet:
    """T x M factor returns plus per-column provenance."""

    series: np.ndarray
    provenance: tuple = ()

    def __post_init__(self):
        s = np.array(self.series, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        prov = tuple(self.provenance) or tuple(FactorSource(f"f{j}") for j in range(s.shape[1]))
        if len(prov) != s.shape[1]:
            raise ValueError("provenance length does not match factor count")
        s.setflags(write=False)
        object.__setattr__(self, "series", s)
        object.__setattr__(self, "provenance", prov)

    @classmethod
    def empty(cls, n_periods: int) -> "FactorSet":
        return cls(np.zeros((n_periods, 0)), ())

    @property
    def n_factors(self) -> int:
        return self.series.shape[1]

    @property
    def n_periods(self) -> int:
        return self.series.shape[0]

    @property
    def labels(self) -> list:
        return [p.source for p in self.provenance]

    def append(self, series, source: FactorSource) -> "FactorSet":
        series = np.asarray(series, dtype=float).reshape(-1, 1)
        return FactorSet(np.hstack([self.series, series]), self.provenance + (source,))

    def prefix(self, m: int) -> "FactorSet":
        return FactorSet(self.series[:, :m], self.provenance[:m])

    def __array__(self, dtype=None, copy=None):
        return self.series if dtype is None else self.series.astype(dtype)


@dataclass(frozen=True, eq=False)
class MveSolution:
    raw_weights: np.ndarray
    weights: np.ndarray
    gamma: float
    sharpe_per_period: float
    sharpe_annualized: float

    def portfolio(self, r) -> np.ndarray:
        return _as_matrix(r) @ self.weights


@dataclass(frozen=True, eq=False)
class SdfSolution:
    weights: np.ndarray
    gamma: float
    complexity: float
    n_train: int = field(default=0)


def _as_matrix(r) -> np.ndarray:
    a = np.asarray(r, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def sample_moments(r, covariance: bool = True) -> dict:
    """Sample mean, second moment (R'R / T) and population covariance."""
    R = _as_matrix(r)
    T = R.shape[0]
    if T < 1:
        raise ValueError("need at least one period")
    mean = R.mean(axis=0)
    second = R.T @ R / T
    out = {"mean": mean, "second_moment": second}
    if covariance:
        if T < 2:
            raise ValueError("covariance needs at least two periods")
        out["covariance"] = second - np.outer(mean, mean)
    return out


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a symmetric system: Cholesky first, pivoted LU if that fails.

    Raises SingularSystemError when the matrix is numerically singular.
    """
    try:
        c = sla.cho_factor(a, lower=True, check_finite=False)
        x = sla.cho_solve(c, b, check_finite=False)
        if np.all(np.isfinite(x)):
            return x
    except np.linalg.LinAlgError:
        pass
    # Cholesky reported a non-positive pivot; fall back to pivoted LU.
    rcond = 1.0 / max(np.linalg.cond(a), 1e-300) if a.size else 1.0
    if not np.isfinite(rcond) or rcond < 1e-15:
        raise SingularSystemError("moment matrix is singular; use a positive shrinkage gamma")
    try:
        x = sla.solve(a, b, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError(str(exc)) from None
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite solution")
    return x


def sharpe_ratio(series) -> float:
    """Per-period Sharpe ratio: mean over sample std (divisor T - 1)."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        return float("nan")
    sd = x.std(ddof=1)
    if not sd > 0:
        return float("nan")
    return float(x.mean() / sd)


def annualized_sharpe(series, periods_per_year: int = 12) -> float:
    """Sample Sharpe ratio (divisor T - 1) scaled by sqrt(periods_per_year)."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two periods")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("series has zero standard deviation")
    return float(x.mean() / sd * np.sqrt(periods_per_year))


def ridge_mve_weights(r, gamma: float = LEAF_GAMMA, periods_per_year: int = 12) -> MveSolution:
    """Ridge tangency weights from (E[RR'] + gamma I) w = E[R], scaled to sum |w| = 1."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    R = _as_matrix(r)
    m = sample_moments(R, covariance=False)
    A = m["second_moment"] + gamma * np.eye(R.shape[1])
    raw = solve_spd(A, m["mean"])
    scale = np.abs(raw).sum()
    if not scale > 0 or not np.isfinite(scale):
        raise DegeneratePortfolioError("tangency weights are all zero (degenerate portfolio)")
    w = raw / scale
    sr = sharpe_ratio(R @ w)
    return MveSolution(raw_weights=raw, weights=w, gamma=float(gamma),
                       sharpe_per_period=sr, sharpe_annualized=sr * np.sqrt(periods_per_year))


def default_epsilon(n_factors: int) -> float:
    return 0.0 if n_factors <= 1 else CRITERION_EPSILON


def criterion_value(f, epsilon: float | None = None) -> float:
    """Tangency Sharpe ratio sqrt(mu' (Sigma + eps I)^-1 mu) of the factor columns.

    Moments use the population divisor T. ``epsilon=None`` means 0 for one
    factor and 1e-12 otherwise.
    """
    F = _as_matrix(f)
    if F.shape[0] < 2:
        raise ValueError("criterion needs at least two periods")
    eps = default_epsilon(F.shape[1]) if epsilon is None else epsilon
    m = sample_moments(F)
    cov = m["covariance"] + eps * np.eye(F.shape[1])
    if F.shape[1] == 1:
        if not cov[0, 0] > 0:
            raise SingularSystemError("factor has zero variance")
        return float(np.sqrt(m["mean"][0] ** 2 / cov[0, 0]))
    x = solve_spd(cov, m["mean"])
    return float(np.sqrt(max(m["mean"] @ x, 0.0)))


def sdf_ridge_weights(r, gamma: float) -> SdfSolution:
    """Minimizer of E[(1 - w'R)^2] + gamma ||w||^2 (weights are not normalized).

    At gamma = 0 the ridgeless limit pinv(R) 1 is returned, which is the
    minimum-norm solution whenever P > T or E[RR'] is singular.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    R = _as_matrix(r)
    T, P = R.shape
    if gamma == 0:
        w, *_ = np.linalg.lstsq(R, np.ones(T), rcond=None)
    else:
        if P > T:
            # Same solution via the T x T dual system.
            K = R @ R.T / T + gamma * np.eye(T)
            w = R.T @ solve_spd(K, np.ones(T)) / T
        else:
            m = sample_moments(R, covariance=False)
            w = solve_spd(m["second_moment"] + gamma * np.eye(P), m["mean"])
    if not np.all(np.isfinite(w)):
        raise SingularSystemError("non-finite SDF weights")
    return SdfSolution(weights=w, gamma=float(gamma), complexity=P / T, n_train=T)


def pricing_error(s: SdfSolution, r_oos) -> float:
    """Out-of-sample HJ-style error mean((1 - w'R_t)^2)."""
    R = _as_matrix(r_oos)
    w = np.asarray(s.weights if isinstance(s, SdfSolution) else s, dtype=float).ravel()
    if R.shape[1] != w.size:
        raise ValueError(f"returns have {R.shape[1]} columns, SDF has {w.size} weights")
    return float(np.mean((1.0 - R @ w) ** 2))


def tangency_sharpe(r, gamma: float, periods_per_year: int = 12) -> float:
    """Annualized in-sample Sharpe of the ridge tangency portfolio."""
    return ridge_mve_weights(r, gamma, periods_per_year).sharpe_annualized


def stack_columns(blocks: Sequence) -> np.ndarray:
    return np.hstack([_as_matrix(b) for b in blocks])
