"""Small panel builders shared by the tests."""

from pathlib import Path

import numpy as np

from ptree.panel import make_panel, rank_normalize


def random_panel(rng, n_assets=8, n_chars=3, n_periods=12, *, ragged=False, signal=0.0):
    """Ranked panel plus the same data as per-period lists for the oracles."""
    periods = 200001 + np.arange(n_periods)
    rows_p, rows_a, rets, wts, chars = [], [], [], [], []
    for t, p in enumerate(periods):
        n = int(rng.integers(max(2, n_assets - 3), n_assets + 1)) if ragged else n_assets
        ids = sorted(rng.choice(n_assets + 3, size=n, replace=False)) if ragged else range(n)
        for a in ids:
            z = rng.standard_normal(n_chars)
            rows_p.append(p)
            rows_a.append(f"a{a}")
            rets.append(0.01 + signal * z[0] + 0.05 * rng.standard_normal())
            wts.append(float(rng.uniform(0.5, 3.0)))
            chars.append(z)
    raw = make_panel(periods, rows_a, rets, wts, np.array(chars), [f"c{k}" for k in range(n_chars)],
                     period_of=rows_p)
    rp = rank_normalize(raw)
    return rp, oracle_data(rp)


def oracle_data(rp):
    b = rp.period_bounds()
    Z, w, r = np.asarray(rp.chars), np.asarray(rp.weight_base), np.asarray(rp.returns)
    return [(Z[b[t]:b[t + 1]].tolist(), w[b[t]:b[t + 1]].tolist(), r[b[t]:b[t + 1]].tolist())
            for t in range(rp.n_periods)]


PIPELINE_INI = """\
[sim]
n_assets = 150
t_train = 48
t_test = 24
n_chars = 6
kappa = 2
[data]
panel = sim/panel.csv
train_end = 190312
test_start = 190401
[growth]
max_leaves = 4
min_leaf_size = 5
[boost]
num_trees = 2
[forest]
num_trees = 12
chars_per_tree = 3
split_mode = random
[sweep]
gammas = 1e-5, 1, 1e3
complexities = 0.5, 1
[evaluate]
assets = grow/leaf_returns.csv
factors = boost/factors.csv
[char_eval]
root_char = ME
child_char = BM
"""

# Order matters: later commands read earlier outputs.
PIPELINE = ("simulate", "ingest", "grow", "boost", "forest", "sdf-sweep", "evaluate", "char-eval")
OUT_DIR = {"simulate": "sim", "sdf-sweep": "sweep", "char-eval": "chars"}


def run_pipeline(root, threads=1, seed=0, ini=PIPELINE_INI):
    """Run every CLI command in ``root``; return {command: output dir}."""
    from ptree.cli import main

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "run.ini"
    cfg.write_text(ini)
    outs = {}
    for cmd in PIPELINE:
        out = root / OUT_DIR.get(cmd, cmd)
        code = main([cmd, "--config", str(cfg), "--out", str(out), "--seed", str(seed),
                     "--threads", str(threads)])
        assert code == 0, cmd
        outs[cmd] = out
    return outs


def output_bytes(out):
    """File name to bytes for every output except the manifest."""
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir()) if p.name != "manifest.json"}


# One "PASS/FAIL" line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list = []
