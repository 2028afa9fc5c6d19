"""
Characteristic importance from a forest
=======================================

Trees grown on bootstrapped periods with random subsets of characteristics.
A characteristic is important if it is picked for the top splits whenever
it is on offer.
"""

from ptree.forest import ForestConfig, grow_forest, importance_table
from ptree.panel import rank_normalize
from ptree.sim import SimConfig, simulate_panel
from ptree.tree import GrowthConfig

cfg = SimConfig(n_assets=300, t_train=120, t_test=0, n_chars=12, kappa=2.0, seed=4)
panel = rank_normalize(simulate_panel(cfg).panel)

forest = grow_forest(panel, ForestConfig(num_trees=40, chars_per_tree=6, seed=4,
                                         tree_config=GrowthConfig(max_leaves=4, min_leaf_size=5)))

rows = importance_table(forest, panel.char_names, Js=(1, 3))
for J in (1, 3):
    print(f"top-{J} selection probability")
    for r in sorted((r for r in rows if r["J"] == J), key=lambda r: -r["probability"])[:6]:
        print(f"  {r['char']:8s} {r['probability']:.2f}  ({r['selected_topJ']}/{r['offered']} offered)")
