"""Random panel-tree forests: importance by selection probability and the stacked-leaf SDF."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mve import ReturnMatrix, annualized_sharpe, pricing_error, sdf_ridge_weights, SDF_GAMMAS
from .panel import Panel
from .tree import GrowthConfig, PTree, grow_random_tree, grow_tree, leaf_returns

SPLIT_MODES = ("goal_oriented", "random")
SDF_COMPLEXITIES = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0)


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 1000
    chars_per_tree: int = 20
    tree_config: GrowthConfig = field(default_factory=GrowthConfig)
    seed: int = 0
    split_mode: str = "goal_oriented"
    bootstrap: bool = True

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be at least 1")
        if self.chars_per_tree < 1:
            raise ValueError("chars_per_tree must be at least 1")
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}")


@dataclass(frozen=True, eq=False)
class ForestTree:
    tree: PTree
    offered_chars: tuple
    bootstrap_periods: np.ndarray


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    stacked_leaves: ReturnMatrix
    config: ForestConfig

    @property
    def n_columns(self) -> int:
        return self.stacked_leaves.shape[1]


def tree_rng(seed: int, b: int) -> np.random.Generator:
    """Independent stream for tree ``b``; does not depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(b)]))


def bootstrap_periods(T: int, rng: np.random.Generator) -> np.ndarray:
    """T period positions drawn with replacement (whole cross-sections), sorted."""
    if T < 1:
        raise ValueError("T must be positive")
    return np.sort(rng.integers(0, T, size=T))


def _grow_one(p: Panel, cfg: ForestConfig, b: int) -> ForestTree:
    rng = tree_rng(cfg.seed, b)
    periods = bootstrap_periods(p.n_periods, rng) if cfg.bootstrap else np.arange(p.n_periods)
    L = min(cfg.chars_per_tree, p.n_chars)
    offered = tuple(sorted(int(k) for k in rng.choice(p.n_chars, size=L, replace=False)))
    if cfg.split_mode == "random":
        tree = grow_random_tree(p, cfg.tree_config, rng, chars=offered, periods=periods)
    else:
        tree = grow_tree(p, cfg.tree_config, chars=offered, periods=periods).tree
    return ForestTree(tree, offered, periods)


def stacked_leaf_returns(trees: Sequence, p: Panel) -> ReturnMatrix:
    """Leaf returns of every tree side by side, in tree order."""
    blocks, labels = [], []
    for b, ft in enumerate(trees):
        tree = ft.tree if isinstance(ft, ForestTree) else ft
        lp = leaf_returns(tree, p)
        blocks.append(np.asarray(lp.returns))
        labels += [f"tree{b}_leaf{j}" for j in range(tree.n_leaves)]
    return ReturnMatrix(np.hstack(blocks), tuple(labels))


def grow_forest(p: Panel, cfg: ForestConfig, threads: int = 1) -> Forest:
    """Grow ``cfg.num_trees`` trees on time-bootstrapped panels with random characteristic subsets.

    The stacked leaf matrix is evaluated on the original (not resampled)
    periods so that every column shares one time index.
    """
    if cfg.chars_per_tree > p.n_chars:
        raise ValueError(f"chars_per_tree={cfg.chars_per_tree} exceeds K={p.n_chars}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            trees = list(ex.map(lambda b: _grow_one(p, cfg, b), range(cfg.num_trees)))
    else:
        trees = [_grow_one(p, cfg, b) for b in range(cfg.num_trees)]
    return Forest(tuple(trees), stacked_leaf_returns(trees, p), cfg)


def selection_probability(f: Forest, J: int) -> dict:
    """Share of trees offering a characteristic that used it within their first J splits.

    Characteristics never offered are absent from the result.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    offered, selected = {}, {}
    for ft in f.trees:
        used = set(ft.tree.split_chars(J))
        for k in ft.offered_chars:
            offered[k] = offered.get(k, 0) + 1
            if k in used:
                selected[k] = selected.get(k, 0) + 1
    return {k: selected.get(k, 0) / n for k, n in sorted(offered.items())}


def importance_table(f: Forest, char_names: Sequence[str], Js=(1, 2, 3)) -> list:
    """Rows ``(J, char, offered, selected_topJ, probability)`` for each J."""
    rows = []
    for J in Js:
        offered, selected = {}, {}
        for ft in f.trees:
            used = set(ft.tree.split_chars(J))
            for k in ft.offered_chars:
                offered[k] = offered.get(k, 0) + 1
                selected[k] = selected.get(k, 0) + (k in used)
        for k in sorted(offered):
            rows.append({"J": J, "char": char_names[k], "offered": offered[k],
                         "selected_topJ": selected[k],
                         "probability": selected[k] / offered[k]})
    return rows


@dataclass(frozen=True)
class SweepCell:
    gamma: float
    complexity: float
    P: int
    oos_sharpe: float
    oos_pricing_error: float


def sdf_sweep_matrices(train, test, gammas: Sequence[float] = SDF_GAMMAS,
                       complexities: Sequence[float] = SDF_COMPLEXITIES,
                       periods_per_year: int = 12, threads: int = 1) -> list:
    """Ridge SDF on the first ceil(c T_train) columns, scored out of sample.

    Returns one :class:`SweepCell` per (gamma, c), gamma-major.
    """
    R_tr = np.asarray(train, dtype=float)
    R_te = np.asarray(test, dtype=float)
    if R_tr.shape[1] != R_te.shape[1]:
        raise ValueError("train and test matrices have different column counts")
    T = R_tr.shape[0]
    jobs = []
    for c in complexities:
        P = math.ceil(c * T - 1e-9)
        if P > R_tr.shape[1]:
            raise ValueError(f"complexity {c} needs {P} columns but only {R_tr.shape[1]} "
                             "are available; grow more trees")
        if P < 1:
            raise ValueError(f"complexity {c} gives no columns")
        for g in gammas:
            jobs.append((g, c, P))

    def cell(job):
        g, c, P = job
        sol = sdf_ridge_weights(R_tr[:, :P], g)
        port = R_te[:, :P] @ sol.weights
        try:
            sr = annualized_sharpe(port, periods_per_year)
        except ValueError:
            sr = float("nan")
        return SweepCell(float(g), float(c), P, sr, pricing_error(sol, R_te[:, :P]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            cells = list(ex.map(cell, jobs))
    else:
        cells = [cell(j) for j in jobs]
    order = {(g, c): i for i, (g, c) in enumerate((g, c) for g in gammas for c in complexities)}
    return sorted(cells, key=lambda s: order[(s.gamma, s.complexity)])


def sdf_sweep(f: Forest, test: Panel, gammas: Sequence[float] = SDF_GAMMAS,
              complexities: Sequence[float] = SDF_COMPLEXITIES,
              periods_per_year: int = 12, threads: int = 1) -> list:
    """Sweep shrinkage and complexity for the forest's stacked-leaf SDF.

    Training returns are ``f.stacked_leaves``; test returns come from
    applying the frozen trees to ``test``.
    """
    test_R = stacked_leaf_returns(f.trees, test)
    return sdf_sweep_matrices(f.stacked_leaves, test_R, gammas, complexities,
                              periods_per_year, threads)
