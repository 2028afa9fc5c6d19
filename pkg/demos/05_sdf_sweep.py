"""
Over-parameterized SDFs
=======================

Stacks the leaf portfolios of many random-split trees and fits ridge SDFs
with more and more of them. For small shrinkage the out-of-sample pricing
error peaks near the point where columns equal training periods.
"""

from ptree.forest import ForestConfig, grow_forest, sdf_sweep
from ptree.panel import rank_normalize
from ptree.sim import SimConfig, simulate_panel, train_test_split
from ptree.tree import GrowthConfig

cfg = SimConfig(n_assets=300, t_train=100, t_test=100, n_chars=20, kappa=1.0, seed=0)
train, test = train_test_split(rank_normalize(simulate_panel(cfg).panel), cfg.t_train)

forest = grow_forest(train, ForestConfig(num_trees=60, chars_per_tree=20, split_mode="random", seed=0,
                                         tree_config=GrowthConfig(max_leaves=10, min_leaf_size=5)))
print("stacked leaf columns:", forest.n_columns)

cells = sdf_sweep(forest, test, gammas=(1e-5, 1.0, 1e3), complexities=(0.1, 0.5, 1.0, 2.0, 5.0))
print(f"{'gamma':>8} {'c':>5} {'P':>5} {'SR':>7} {'PE':>8}")
for c in cells:
    print(f"{c.gamma:8.0e} {c.complexity:5.1f} {c.P:5d} {c.oos_sharpe:7.2f} {c.oos_pricing_error:8.4f}")
