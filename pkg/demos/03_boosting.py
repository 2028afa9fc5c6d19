"""
Boosted trees
=============

Each new tree is grown to add the most to the tangency Sharpe of the factors
already built. The cumulative Sharpe column shows how much each one adds.
"""

import numpy as np

from ptree.boost import BoostConfig, boost, cumulative_sharpe
from ptree.evaluate import expanding_factor_test
from ptree.mve import FactorSet, FactorSource
from ptree.panel import market_returns, rank_normalize
from ptree.sim import SimConfig, simulate_panel
from ptree.tree import GrowthConfig

panel = rank_normalize(simulate_panel(SimConfig(n_assets=300, t_train=150, t_test=0,
                                                n_chars=8, kappa=1.0, seed=3)).panel)

# Start from the market so the first tree has to beat it.
start = FactorSet.empty(panel.n_periods).append(market_returns(panel), FactorSource("mkt"))
res = boost(panel, BoostConfig(num_trees=3, initial_factors=start,
                               tree_config=GrowthConfig(max_leaves=5, min_leaf_size=5)))

print("factors:", res.factors.labels)
print("cumulative Sharpe (gamma_f = 0):", np.round(cumulative_sharpe(res, gamma=0.0), 2))
print("cumulative Sharpe (gamma_f = 1e-5):", np.round(cumulative_sharpe(res), 2))

# Every factor regressed on the ones before it. A large alpha means the new
# tree found something the earlier ones miss.
for label, row in zip(res.factors.labels, expanding_factor_test(res.factors.series)):
    if row is None:
        print(label, "-")
    else:
        print(label, f"alpha {row['alpha']:.4f}  t {row['t_stat']:.1f}  R2 {row['r_squared']:.2f}")
