"""Boosted panel trees.

Each new tree is grown to maximize the tangency Sharpe ratio of all
incumbent factors plus its own factor. The all-tree tangency is then solved
over the factor columns only, never over the pooled leaves.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .mve import (FACTOR_GAMMA, FactorSet, FactorSource, MveSolution, ridge_mve_weights,
                  sharpe_ratio)
from .panel import Panel
from .tree import GrowthConfig, grow_tree, leaf_returns

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoostConfig:
    num_trees: int = 1
    factor_gamma: float = FACTOR_GAMMA
    tree_config: GrowthConfig = field(default_factory=GrowthConfig)
    initial_factors: FactorSet | None = None

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be at least 1")
        if self.factor_gamma < 0:
            raise ValueError("factor_gamma must be nonnegative")


@dataclass(frozen=True, eq=False)
class BoostResult:
    trees: tuple
    leaf_blocks: tuple
    factors: FactorSet
    mve: MveSolution
    n_initial: int = 0
    degenerate: tuple = ()
    factor_gamma: float = FACTOR_GAMMA

    def tree_factors_on(self, panel: Panel) -> np.ndarray:
        """Tree factor columns (T x num_trees) of the frozen trees on another panel."""
        cols = []
        for tree, prov in zip(self.trees, self.factors.provenance[self.n_initial:]):
            R = np.asarray(leaf_returns(tree, panel).returns)
            cols.append(R @ prov.leaf_weights)
        return np.column_stack(cols)


def boost(p: Panel, cfg: BoostConfig, threads: int = 1) -> BoostResult:
    """Grow ``cfg.num_trees`` trees sequentially against the growing factor set."""
    factors = cfg.initial_factors if cfg.initial_factors is not None else FactorSet.empty(p.n_periods)
    if factors.n_periods != p.n_periods:
        raise ValueError("initial factors are not aligned with the panel periods")
    n_initial = factors.n_factors
    trees, blocks, degenerate = [], [], []
    mve = None
    for b in range(cfg.num_trees):
        incumbents = factors if factors.n_factors else None
        grown = grow_tree(p, cfg.tree_config, incumbents, threads=threads)
        if grown.root_only:
            log.warning("boosted tree %d has no feasible split; keeping the market leaf", b + 1)
        trees.append(grown.tree)
        blocks.append(grown.leaves)
        degenerate.append(grown.root_only)
        factors = factors.append(grown.factor, FactorSource(f"tree{b + 1}", grown.mve.weights))
        mve = ridge_mve_weights(factors.series, cfg.factor_gamma)
    return BoostResult(trees=tuple(trees), leaf_blocks=tuple(blocks), factors=factors, mve=mve,
                       n_initial=n_initial, degenerate=tuple(degenerate),
                       factor_gamma=cfg.factor_gamma)


def cumulative_sharpe(result: BoostResult, gamma: float | None = None,
                      periods_per_year: int = 12) -> list:
    """Annualized tangency Sharpe over initial factors plus the first k tree factors."""
    g = result.factor_gamma if gamma is None else gamma
    F = result.factors.series
    out = []
    for k in range(1, len(result.trees) + 1):
        out.append(ridge_mve_weights(F[:, :result.n_initial + k], g,
                                     periods_per_year).sharpe_annualized)
    return out


def boost_report(result: BoostResult, periods_per_year: int = 12) -> dict:
    """Per-factor single and cumulative Sharpe ratios, labeled by source."""
    cumu = cumulative_sharpe(result, periods_per_year=periods_per_year)
    rows = []
    for j, prov in enumerate(result.factors.provenance):
        single = sharpe_ratio(result.factors.series[:, j]) * np.sqrt(periods_per_year)
        k = j - result.n_initial
        rows.append({"factor": prov.source,
                     "benchmark": j < result.n_initial,
                     "single_sharpe": single,
                     "cumulative_sharpe": cumu[k] if k >= 0 else None,
                     "degenerate": result.degenerate[k] if k >= 0 else None})
    return {"factor_gamma": result.factor_gamma, "n_initial": result.n_initial,
            "factors": rows}


def boost_report_json(result: BoostResult, periods_per_year: int = 12) -> str:
    return json.dumps(boost_report(result, periods_per_year), indent=2, sort_keys=True)
