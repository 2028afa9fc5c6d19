"""Synthetic panels with a known characteristic signal.

Raw characteristics follow a per-asset VAR(1) with one common shock so that
noise characteristics correlate with the three true ones. Returns load on
ranked, lagged characteristics:

    r = mkt + kappa * (c1 ME + c2 BM + c3 ME*BM + c4 MOM + c5 MOM^2) + eps

The records of period t carry the characteristics observed at t - 1 and a
weight base of exp(raw ME at t - 1).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from .mve import ReturnMatrix
from .panel import Panel, PeriodMask, make_panel, rank_cross_section, subsample
from .tree import GrowthConfig, GrownTree, grow_tree


def _load_defaults() -> dict:
    text = resources.files("ptree").joinpath("data/sim_defaults.json").read_text()
    return json.loads(text)


SIM_DEFAULTS = _load_defaults()


@dataclass(frozen=True)
class SimConfig:
    n_assets: int = 1000
    t_train: int = 500
    t_test: int = 500
    n_chars: int = SIM_DEFAULTS["n_chars"]
    kappa: float = 1.0
    coefs: tuple = tuple(SIM_DEFAULTS["coefs"])
    sigma_eps: float = SIM_DEFAULTS["sigma_eps"]
    var1_persistence: float = SIM_DEFAULTS["var1_persistence"]
    var1_cross_corr: float = SIM_DEFAULTS["var1_common_loading"]
    market_mean: float = SIM_DEFAULTS["market_mean"]
    market_std: float = SIM_DEFAULTS["market_std"]
    true_char_indices: tuple = (0, 1, 2)
    seed: int = 0
    start_period: int = 190001

    def __post_init__(self):
        object.__setattr__(self, "coefs", tuple(float(c) for c in self.coefs))
        object.__setattr__(self, "true_char_indices", tuple(int(k) for k in self.true_char_indices))
        if len(self.coefs) != 5:
            raise ValueError("coefs must have five entries (c1..c5)")
        if self.sigma_eps < 0 or self.market_std < 0:
            raise ValueError("standard deviations must be nonnegative")
        if not 0.0 <= self.var1_persistence < 1.0:
            raise ValueError("var1_persistence must lie in [0, 1)")
        if not 0.0 <= self.var1_cross_corr <= 1.0:
            raise ValueError("var1_cross_corr (common loading) must lie in [0, 1]")
        tci = self.true_char_indices
        if len(tci) != 3 or len(set(tci)) != 3 or min(tci) < 0 or max(tci) >= self.n_chars:
            raise ValueError("true_char_indices must be three distinct indices below n_chars")
        if self.n_assets < 2 or self.t_train + self.t_test < 1:
            raise ValueError("need at least two assets and one period")

    @property
    def n_periods(self) -> int:
        return self.t_train + self.t_test

    def char_names(self) -> list:
        names = [f"X{k:02d}" for k in range(self.n_chars)]
        for k, name in zip(self.true_char_indices, ("ME", "BM", "MOM12M")):
            names[k] = name
        return names

    def to_json(self) -> str:
        d = asdict(self)
        d["coefs"] = list(self.coefs)
        d["true_char_indices"] = list(self.true_char_indices)
        d["defaults_version"] = SIM_DEFAULTS["version"]
        return json.dumps(d, indent=2, sort_keys=True)


@dataclass(frozen=True, eq=False)
class SimResult:
    panel: Panel
    truth: SimConfig
    market: np.ndarray


def month_ids(start: int, n: int) -> np.ndarray:
    y, m = divmod(start, 100)
    idx = (y * 12 + m - 1) + np.arange(n)
    return (idx // 12) * 100 + idx % 12 + 1


def simulate_panel(cfg: SimConfig) -> SimResult:
    rng = np.random.default_rng(cfg.seed)
    n, K, T = cfg.n_assets, cfg.n_chars, cfg.n_periods
    rho, a = cfg.var1_persistence, cfg.var1_cross_corr
    c1, c2, c3, c4, c5 = cfg.coefs
    i_me, i_bm, i_mom = cfg.true_char_indices
    periods = month_ids(cfg.start_period, T)
    asset_ids = np.array([f"A{i:05d}" for i in range(n)], dtype=object)

    x = rng.standard_normal((n, K))
    mkt = cfg.market_mean + cfg.market_std * rng.standard_normal(T)
    rets = np.empty((T, n))
    chars = np.empty((T, n, K))
    for t in range(T):
        z = rank_cross_section(x)
        signal = (c1 * z[:, i_me] + c2 * z[:, i_bm] + c3 * z[:, i_me] * z[:, i_bm]
                  + c4 * z[:, i_mom] + c5 * z[:, i_mom] ** 2)
        rets[t] = mkt[t] + cfg.kappa * signal + cfg.sigma_eps * rng.standard_normal(n)
        chars[t] = x
        common = rng.standard_normal(n)[:, None]
        x = rho * x + np.sqrt(1 - rho ** 2) * (a * common + np.sqrt(1 - a ** 2)
                                                * rng.standard_normal((n, K)))
    weight = np.exp(chars[:, :, i_me])
    panel = make_panel(periods, np.tile(asset_ids, T), rets.ravel(), weight.ravel(),
                       chars.reshape(T * n, K), cfg.char_names(),
                       period_of=np.repeat(periods, n))
    return SimResult(panel=panel, truth=cfg, market=mkt)


def train_test_split(panel: Panel, t_train: int) -> tuple:
    """First ``t_train`` periods and the rest."""
    inc = np.arange(panel.n_periods) < t_train
    train = subsample(panel, PeriodMask(inc))
    test = subsample(panel, PeriodMask(~inc)) if (~inc).any() else None
    return train, test


def oracle_tree(panel: Panel, truth: SimConfig, cfg: GrowthConfig = GrowthConfig(),
                threads: int = 1) -> GrownTree:
    """Tree grown only on the true characteristics."""
    return grow_tree(panel, cfg, chars=truth.true_char_indices, threads=threads)


@dataclass(frozen=True)
class GapReport:
    in_sample_sr: float
    oos_sr: float
    true_predictability_sr: float
    overfitting: float
    limits_to_learning: float

    @property
    def gap(self) -> float:
        return self.in_sample_sr - self.oos_sr


def gap_decomposition(in_sr: float, oracle_oos_sr: float, oos_sr: float) -> GapReport:
    """Split the in/out-of-sample gap at the oracle's out-of-sample Sharpe ratio."""
    return GapReport(in_sample_sr=in_sr, oos_sr=oos_sr, true_predictability_sr=oracle_oos_sr,
                     overfitting=in_sr - oracle_oos_sr,
                     limits_to_learning=oracle_oos_sr - oos_sr)


def sort_bins(z: np.ndarray, bins: int) -> np.ndarray:
    """Bin index of ranked values z in [-1, 1] into ``bins`` equal-width groups."""
    b = np.floor((np.asarray(z) + 1.0) / 2.0 * bins).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def sorted_portfolio_baselines(panel: Panel, chars, bins: int = 10) -> tuple:
    """Value-weighted sorted portfolios, rebuilt each period.

    One characteristic gives ``bins`` univariate portfolios; two give
    ``bins x bins`` independent bivariate portfolios (first char major).
    Returns ``(ReturnMatrix, counts)``; empty cells have return 0, count 0.
    """
    chars = [int(k) for k in np.atleast_1d(chars)]
    if bins < 2:
        raise ValueError("bins must be at least 2")
    if len(chars) not in (1, 2):
        raise ValueError("use one or two characteristics")
    z = np.asarray(panel.chars)
    cell = sort_bins(z[:, chars[0]], bins)
    n_cells = bins
    if len(chars) == 2:
        cell = cell * bins + sort_bins(z[:, chars[1]], bins)
        n_cells = bins * bins
    T = panel.n_periods
    key = np.asarray(panel.period_index) * n_cells + cell
    w = np.asarray(panel.weight_base)
    W = np.bincount(key, weights=w, minlength=T * n_cells).reshape(T, n_cells)
    WR = np.bincount(key, weights=w * np.asarray(panel.returns),
                     minlength=T * n_cells).reshape(T, n_cells)
    C = np.bincount(key, minlength=T * n_cells).reshape(T, n_cells)
    R = np.divide(WR, W, out=np.zeros_like(WR), where=W > 0)
    if len(chars) == 1:
        labels = tuple(f"{panel.char_names[chars[0]]}_{b + 1}" for b in range(bins))
    else:
        labels = tuple(f"{panel.char_names[chars[0]]}{i + 1}_{panel.char_names[chars[1]]}{j + 1}"
                       for i in range(bins) for j in range(bins))
    return ReturnMatrix(R, labels), np.where(W > 0, C, 0)
