"""Time-series regressions, the GRS test, cross-sectional R^2 and expanding-factor tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class TsRegressionReport:
    alpha: np.ndarray
    betas: np.ndarray
    alpha_se: np.ndarray
    alpha_t_stat: np.ndarray
    r_squared: np.ndarray
    residuals: np.ndarray
    dof: int


@dataclass(frozen=True)
class GrsReport:
    statistic: float
    p_value: float
    N: int
    T: int
    M: int


@dataclass(frozen=True, eq=False)
class CsR2Report:
    lambda_: np.ndarray
    predicted_means: np.ndarray
    r_squared: float


def _mat(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _collinear_columns(X: np.ndarray, names) -> list:
    bad, kept = [], []
    for j in range(X.shape[1]):
        trial = X[:, kept + [j]]
        if np.linalg.matrix_rank(trial) < len(kept) + 1:
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def ts_regress(assets, factors) -> TsRegressionReport:
    """OLS of each asset on [1, factors] with homoskedastic standard errors.

    ``factors`` may be a T x M array or a FactorSet; M = 0 gives mean-only
    regressions.
    """
    Y = _mat(assets)
    F = _mat(factors) if np.asarray(factors).size else np.zeros((Y.shape[0], 0))
    T, M = F.shape
    if Y.shape[0] != T:
        raise ValueError("assets and factors have different lengths")
    if T <= M + 1:
        raise ValueError(f"need T > M + 1 (T={T}, M={M})")
    X = np.column_stack([np.ones(T), F])
    if np.linalg.matrix_rank(X) < M + 1:
        names = ["const"] + [f"factor{j}" for j in range(M)]
        raise RankDeficientError(f"regressors are collinear: {_collinear_columns(X, names)}")
    XtX_inv = np.linalg.inv(X.T @ X)
    coef = XtX_inv @ X.T @ Y
    resid = Y - X @ coef
    dof = T - M - 1
    s2 = np.einsum("tn,tn->n", resid, resid) / dof
    se = np.sqrt(s2 * XtX_inv[0, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = coef[0] / se
        yc = Y - Y.mean(axis=0)
        sst = np.einsum("tn,tn->n", yc, yc)
        ssr = np.einsum("tn,tn->n", resid, resid)
        r2 = np.where(sst > 0, 1.0 - ssr / sst, 0.0)
        tstat = np.where(se > 0, tstat, np.where(coef[0] == 0, 0.0, np.sign(coef[0]) * np.inf))
    return TsRegressionReport(alpha=coef[0], betas=coef[1:].T, alpha_se=se, alpha_t_stat=tstat,
                              r_squared=np.clip(r2, 0.0, 1.0), residuals=resid, dof=dof)


def grs(assets, factors) -> GrsReport:
    """Gibbons-Ross-Shanken test that all alphas are zero.

    W = (T - N - M) / N * a' S^-1 a / (1 + mu' O^-1 mu), with S the residual
    and O the factor covariance, both with divisor T; W ~ F(N, T - N - M).
    """
    Y = _mat(assets)
    F = _mat(factors)
    T, N = Y.shape
    M = F.shape[1]
    if T <= N + M:
        raise ValueError(f"GRS test is not applicable: need T > N + M (T={T}, N={N}, M={M})")
    rep = ts_regress(Y, F)
    e = rep.residuals
    Sigma = e.T @ e / T
    mu = F.mean(axis=0)
    Fc = F - mu
    Omega = Fc.T @ Fc / T
    # Rank relative to the scale of the asset returns, so exact-model
    # residuals made of roundoff register as singular.
    yc = Y - Y.mean(axis=0)
    sv = np.linalg.svd(e, compute_uv=False)
    tol = 1e-10 * max(np.linalg.norm(yc, 2), sv.max(initial=0.0))
    if np.sum(sv > tol) < N:
        raise RankDeficientError("residual covariance is singular")
    quad_a = float(rep.alpha @ np.linalg.solve(Sigma, rep.alpha))
    quad_f = float(mu @ np.linalg.solve(Omega, mu)) if M else 0.0
    W = (T - N - M) / N * quad_a / (1.0 + quad_f)
    p = float(stats.f.sf(W, N, T - N - M))
    return GrsReport(statistic=float(W), p_value=p, N=N, T=T, M=M)


def cross_sectional_r2(assets, factors) -> CsR2Report:
    """Two-pass R^2 = 1 - sum (Rbar - B lam)^2 / sum Rbar^2 (un-centered).

    Betas come from time-series regressions; premia from a cross-sectional
    regression of mean returns on betas without an intercept.
    """
    Y = _mat(assets)
    N = Y.shape[1]
    rep = ts_regress(Y, factors)
    B = rep.betas
    M = B.shape[1]
    if N <= M:
        raise ValueError(f"need N > M (N={N}, M={M})")
    sv = np.linalg.svd(B, compute_uv=False)
    if sv.min() <= max(1e-10 * sv.max(), 1e-12):
        raise RankDeficientError("beta matrix is rank deficient")
    rbar = Y.mean(axis=0)
    lam, *_ = np.linalg.lstsq(B, rbar, rcond=None)
    pred = B @ lam
    denom = float(rbar @ rbar)
    r2 = 1.0 - float(np.sum((rbar - pred) ** 2)) / denom if denom > 0 else float("nan")
    return CsR2Report(lambda_=lam, predicted_means=pred, r_squared=r2)


def expanding_factor_test(factors) -> list:
    """Regress factor k on factors 1..k-1; the first row is None (not applicable)."""
    F = _mat(factors)
    rows = [None]
    for k in range(1, F.shape[1]):
        rep = ts_regress(F[:, k], F[:, :k])
        rows.append({"alpha": float(rep.alpha[0]), "t_stat": float(rep.alpha_t_stat[0]),
                     "r_squared": float(rep.r_squared[0])})
    return rows


def leaf_table(leaf_returns, counts, market) -> list:
    """Per-leaf summary: ID, median count, mean, std, CAPM alpha, beta, R^2."""
    R = _mat(leaf_returns)
    rep = ts_regress(R, _mat(market))
    med = np.median(np.asarray(counts), axis=0)
    rows = []
    for j in range(R.shape[1]):
        rows.append({"ID": j, "median_count": float(med[j]), "AVG": float(R[:, j].mean()),
                     "STD": float(R[:, j].std(ddof=1)), "alpha": float(rep.alpha[j]),
                     "alpha_t": float(rep.alpha_t_stat[j]), "beta": float(rep.betas[j, 0]),
                     "R2": float(rep.r_squared[j])})
    return rows


def pricing_summary(assets, factors) -> dict:
    """Test-asset pricing summary: GRS, alpha magnitudes, mean R^2, share significant."""
    Y = _mat(assets)
    rep = ts_regress(Y, factors)
    try:
        g = grs(Y, factors)
        grs_stat, grs_p = g.statistic, g.p_value
    except (ValueError, np.linalg.LinAlgError):
        grs_stat = grs_p = None
    out = {"N": Y.shape[1], "GRS": grs_stat, "p_GRS": grs_p,
           "mean_abs_alpha": float(np.mean(np.abs(rep.alpha))),
           "rms_alpha": float(np.sqrt(np.mean(rep.alpha ** 2))),
           "mean_R2": float(np.mean(rep.r_squared))}
    for level in (0.10, 0.05, 0.01):
        crit = stats.t.ppf(1 - level / 2, rep.dof)
        out[f"pct_significant_{int(level * 100)}"] = float(np.mean(np.abs(rep.alpha_t_stat) > crit))
    return out
