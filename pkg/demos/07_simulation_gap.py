"""
How much of the in/out-of-sample gap is overfitting?
====================================================

On simulated data the true characteristics are known, so a tree restricted
to them gives a benchmark out-of-sample Sharpe ("true predictability"). The
gap between in-sample and out-of-sample Sharpe splits at that benchmark.
"""

from ptree.mve import annualized_sharpe
from ptree.panel import rank_normalize
from ptree.sim import SimConfig, gap_decomposition, oracle_tree, simulate_panel, train_test_split
from ptree.tree import GrowthConfig, grow_tree

growth = GrowthConfig(max_leaves=6, min_leaf_size=10)
for kappa in (0.5, 1.0, 2.0):
    cfg = SimConfig(n_assets=400, t_train=150, t_test=150, n_chars=20, kappa=kappa, seed=7)
    train, test = train_test_split(rank_normalize(simulate_panel(cfg).panel), cfg.t_train)
    tree = grow_tree(train, growth)
    oracle = oracle_tree(train, cfg, growth)
    g = gap_decomposition(tree.mve.sharpe_annualized, annualized_sharpe(oracle.factor_on(test)),
                          annualized_sharpe(tree.factor_on(test)))
    print(f"kappa {kappa}: in {g.in_sample_sr:.2f}  oos {g.oos_sr:.2f}  oracle oos "
          f"{g.true_predictability_sr:.2f}  overfitting {g.overfitting:+.2f}  "
          f"limits to learning {g.limits_to_learning:+.2f}")
