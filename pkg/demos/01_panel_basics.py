"""
Loading and ranking a panel
===========================

Reads the small packaged sample panel, looks at what the loader kept, then
rank-normalizes the characteristics cross-section by cross-section.
"""

from importlib import resources

import numpy as np

from ptree.panel import load_panel, period_range_mask, rank_normalize, subsample, winsorize_returns

path = resources.files("ptree").joinpath("data/demo_panel.csv")
panel = load_panel(str(path))
print(panel.n_periods, "periods,", panel.n_records, "records,", panel.n_chars, "characteristics")
print("characteristics:", panel.char_names)
print("load report:", panel.load_report.to_json())

# Raw characteristics are on arbitrary scales and have a few holes.
raw = np.asarray(panel.chars)
print("missing share per char:", np.round(np.isnan(raw).mean(axis=0), 3))

# Ranking maps each period's values onto [-1, 1]; missing values get the
# neutral value 0 and are remembered in missing_mask.
ranked = rank_normalize(panel)
z = np.asarray(ranked.chars)
print("ranked range:", z.min(), z.max())
print("imputed cells:", int(np.asarray(ranked.missing_mask).sum()))

# Inside one period the ranks are evenly spaced.
first = slice(*ranked.period_bounds()[:2])
print("period", ranked.periods[0], "ME ranks (first 5 sorted):", np.sort(z[first, 0])[:5])

# Clip returns at the 1st/99th percentile of each period.
wins = winsorize_returns(ranked, 0.01, 0.99)
print("max |ret| before / after:", np.abs(ranked.returns).max().round(4),
      np.abs(wins.returns).max().round(4))

# Period masks pick sub-samples without copying the logic around.
mask = period_range_mask(ranked, 190101, 190112)
year2 = subsample(ranked, mask)
print("1901 only:", year2.n_periods, "periods, first", year2.periods[0])
