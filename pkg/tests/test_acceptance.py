"""End-to-end acceptance checks, one test per criterion.

Each test records a ``PASS``/``FAIL criterion N: ...`` line (shown in the
pytest terminal summary) before asserting. Simulated-data criteria use the
simulator defaults for every data-generating parameter. Criteria 5 and 6
are known to fail at those defaults; see the README for why.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

import oracles
from helpers import ACCEPTANCE_LINES, output_bytes, random_panel, run_pipeline
from ptree.boost import BoostConfig, boost, cumulative_sharpe
from ptree.evaluate import cross_sectional_r2, grs
from ptree.forest import ForestConfig, grow_forest, sdf_sweep, selection_probability
from ptree.mve import SDF_GAMMAS, ridge_mve_weights, sample_moments, sdf_ridge_weights
from ptree.panel import rank_normalize
from ptree.sim import (SimConfig, gap_decomposition, simulate_panel, sorted_portfolio_baselines,
                       train_test_split)
from ptree.tree import GrowthConfig, grow_tree

pytestmark = pytest.mark.acceptance


def _check(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _ranked_sim(**kw):
    return rank_normalize(simulate_panel(SimConfig(**kw)).panel)


def test_criterion_01_split_oracle():
    cfg = GrowthConfig(max_leaves=3, min_leaf_size=1)
    mismatches = 0
    t0 = time.perf_counter()
    for i in range(100):
        rng = np.random.default_rng(10_000 + i)
        rp, data = random_panel(rng, n_assets=int(rng.integers(4, 11)), n_chars=3, n_periods=12,
                                ragged=bool(i % 2), signal=0.02 * (i % 3))
        got = [(s.node, s.rule.char_index, s.rule.threshold) for s in grow_tree(rp, cfg).steps]
        want = [c for c, _ in oracles.greedy(data, 3, 2, gamma=cfg.leaf_gamma, min_leaf=1)]
        mismatches += got != want
    elapsed = time.perf_counter() - t0
    _check(1, mismatches == 0 and elapsed < 10.0,
           f"{100 - mismatches}/100 panels match the exhaustive two-split oracle in {elapsed:.2f}s")


def test_criterion_02_ridge_solves():
    rng = np.random.default_rng(2)
    worst_res = worst_id = 0.0
    for i in range(1000):
        T = int(rng.integers(6, 120))
        R = 0.01 + 0.05 * rng.standard_normal((T, 5))
        gamma = float(rng.choice([1e-4, *SDF_GAMMAS]))
        m = sample_moments(R, covariance=False)
        A = m["second_moment"] + gamma * np.eye(5)
        scale = 1.0 + np.abs(m["mean"]).max()
        mve = ridge_mve_weights(R, gamma)
        sdf = sdf_ridge_weights(R, gamma)
        res = max(np.abs(A @ mve.raw_weights - m["mean"]).max(),
                  np.abs(A @ sdf.weights - m["mean"]).max()) / scale
        ref = np.linalg.solve(R.T @ R + gamma * T * np.eye(5), R.T @ np.ones(T))
        worst_res = max(worst_res, res)
        worst_id = max(worst_id, np.abs(sdf.weights - ref).max() / np.abs(ref).max())
    _check(2, worst_res <= 1e-10 and worst_id <= 1e-10,
           f"max scaled residual {worst_res:.1e}, max relative identity gap {worst_id:.1e}")


def test_criterion_03_grs_null():
    rng = np.random.default_rng(3)
    N, M, T, reps = 10, 3, 240, 2000
    B = rng.uniform(0.5, 1.5, (M, N))
    t0 = time.perf_counter()
    pvals = np.empty(reps)
    for r in range(reps):
        F = 0.005 + 0.04 * rng.standard_normal((T, M))
        Y = F @ B + 0.02 * rng.standard_normal((T, N))
        pvals[r] = grs(Y, F).p_value
    elapsed = time.perf_counter() - t0
    rate = float(np.mean(pvals < 0.05))
    ks = stats.kstest(pvals, "uniform").pvalue
    _check(3, 0.03 <= rate <= 0.07 and ks > 0.01 and elapsed < 60.0,
           f"rejection rate {rate:.3f}, KS p {ks:.3f}, {elapsed:.1f}s")


def test_criterion_04_cs_r2_exactness():
    rng = np.random.default_rng(4)
    F = 0.005 + 0.04 * rng.standard_normal((120, 2))
    exact = cross_sectional_r2(F @ rng.uniform(0.2, 1.5, (2, 8)), F).r_squared
    f = 0.04 * rng.standard_normal(60)
    f = f - f.mean()
    # One asset loads +1 and one -1 on the factor with equal means: zero premium.
    zero = cross_sectional_r2(np.column_stack([0.01 + f, 0.01 - f]), f).r_squared
    _check(4, abs(exact - 1.0) <= 1e-10 and abs(zero) <= 1e-10,
           f"exactly priced R2 = 1 {exact - 1:+.1e}, zero premium R2 = {zero:+.1e}")


def test_criterion_05_boost_monotonicity():
    worst0, worst5 = math.inf, math.inf
    for seed in range(10):
        rp = _ranked_sim(n_assets=500, t_train=250, t_test=0, kappa=1.0, seed=seed)
        res = boost(rp, BoostConfig(num_trees=5))
        worst0 = min(worst0, float(np.diff(cumulative_sharpe(res, gamma=0.0)).min()))
        worst5 = min(worst5, float(np.diff(cumulative_sharpe(res, gamma=1e-5)).min()))
    _check(5, worst0 >= -1e-8 and worst5 >= -1e-4,
           f"worst step at gamma_f=0: {worst0:+.4f} (bound -1e-8); "
           f"at gamma_f=1e-5: {worst5:+.4f} (bound -1e-4)")


def test_criterion_06_forest_selection():
    shares = []
    for seed in range(5):
        rp = _ranked_sim(n_assets=500, t_train=250, t_test=0, kappa=2.0, seed=seed)
        forest = grow_forest(rp, ForestConfig(num_trees=200, chars_per_tree=20, seed=seed,
                                              tree_config=GrowthConfig(max_leaves=4)))
        probs = selection_probability(forest, 3)
        shares.append(sum(probs[k] for k in (0, 1, 2)) / sum(probs.values()))
    avg = float(np.mean(shares))
    _check(6, avg >= 0.9, f"true characteristics hold {avg:.3f} of top-3 selection mass "
                          f"(per seed {np.round(shares, 3).tolist()}, need 0.9)")


def test_criterion_07_tree_beats_sorts():
    wins, detail = 0, []
    for seed in range(10):
        rp = _ranked_sim(kappa=1.0, t_test=0, seed=seed)
        tree_sr = grow_tree(rp).mve.sharpe_annualized
        R, _ = sorted_portfolio_baselines(rp, (0, 1), bins=5)
        sort_sr = ridge_mve_weights(np.asarray(R), 1e-4).sharpe_annualized
        wins += tree_sr > sort_sr
        detail.append(f"{tree_sr:.2f}>{sort_sr:.2f}")
    _check(7, wins >= 8, f"first tree beats 5x5 ME-BM sorts in {wins}/10 seeds ({', '.join(detail)})")


def test_criterion_08_double_ascent():
    cs = (0.1, 0.5, 1.0, 2.0, 5.0)
    peaks, trends = 0, []
    for seed in range(5):
        rp = _ranked_sim(n_assets=300, t_train=100, t_test=100, n_chars=20, kappa=1.0, seed=seed)
        train, test = train_test_split(rp, 100)
        forest = grow_forest(train, ForestConfig(num_trees=60, chars_per_tree=20, split_mode="random",
                                                 seed=seed, tree_config=GrowthConfig(max_leaves=10,
                                                                                     min_leaf_size=5)))
        cells = sdf_sweep(forest, test, gammas=(1e-5, 1e3), complexities=cs)
        lo = [c.oos_pricing_error for c in cells if c.gamma == 1e-5]
        hi = [c.oos_pricing_error for c in cells if c.gamma == 1e3]
        peaks += lo[2] > lo[1] and lo[2] > lo[4]
        trends.append(stats.spearmanr(cs, hi, alternative="less"))
    trend_ok = all(t.statistic < 0 and t.pvalue < 0.05 for t in trends)
    _check(8, peaks >= 3 and trend_ok,
           f"peak at c=1 in {peaks}/5 seeds at gamma=1e-5; gamma=1e3 Spearman rho "
           f"{[round(float(t.statistic), 2) for t in trends]}")


def test_criterion_09_cli_determinism(tmp_path):
    a = run_pipeline(tmp_path / "a", threads=1)
    b = run_pipeline(tmp_path / "b", threads=1)
    c = run_pipeline(tmp_path / "c", threads=2)
    differing = [cmd for cmd in a if not (output_bytes(a[cmd]) == output_bytes(b[cmd])
                                          == output_bytes(c[cmd]))]
    _check(9, not differing and all(output_bytes(out) for out in a.values()),
           f"{len(a) - len(differing)}/{len(a)} commands byte-identical across reruns and "
           f"--threads 1/2" + (f" (differ: {differing})" if differing else ""))


def test_criterion_10_gap_identities():
    rng = np.random.default_rng(10)
    bad = 0
    for a, b, c in rng.normal(0, 5, (10_000, 3)):
        g = gap_decomposition(float(a), float(b), float(c))
        bad += not (g.overfitting == a - b and g.limits_to_learning == b - c
                    and g.true_predictability_sr == b)
    _check(10, bad == 0, f"{10_000 - bad}/10000 random triples satisfy both identities exactly")
