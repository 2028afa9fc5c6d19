"""Command-line entry point.

    ptree <command> [--config run.ini] [--out DIR] [--seed N] [--threads N]

Commands read an INI file whose sections mirror the library's config
objects (``[data]``, ``[growth]``, ``[boost]``, ``[forest]``, ``[sweep]``,
``[evaluate]``, ``[sim]``, ``[char_eval]``, ``[run]``); flags override the
``[run]`` section. Every command writes ``manifest.json`` last, so its
presence marks a complete run. Only the manifest carries a timestamp.
``[data] panel = builtin:demo`` points at a small packaged sample panel.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .boost import BoostConfig, boost, boost_report
from .evaluate import cross_sectional_r2, expanding_factor_test, leaf_table, pricing_summary, ts_regress
from .forest import (SDF_COMPLEXITIES, ForestConfig, ForestTree, grow_forest, importance_table,
                     sdf_sweep_matrices, stacked_leaf_returns)
from .mve import SDF_GAMMAS, FactorSet, FactorSource, annualized_sharpe
from .panel import (DEFAULT_SCHEMA, Panel, PanelError, load_panel, market_returns,
                    period_range_mask, rank_normalize, subsample, winsorize_returns, write_panel)
from .sim import SimConfig, simulate_panel
from .tree import (DEFAULT_GRID, GrowthConfig, PTree, baseline_spec, grow_fixed_tree, grow_tree,
                   incremental_char_value)

COMMANDS = ("ingest", "grow", "boost", "forest", "sdf-sweep", "evaluate", "simulate", "char-eval")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

class _Section:
    """Typed reads from one INI section; every value read is recorded."""

    def __init__(self, cp: configparser.ConfigParser, name: str, record: dict):
        self.name = name
        self.values = dict(cp[name]) if cp.has_section(name) else {}
        self.record = record.setdefault(name, {})

    def _raw(self, key):
        v = self.values.get(key)
        return None if v is None or v.strip() == "" else v.strip()

    def _conv(self, key, default, conv):
        raw = self._raw(key)
        if raw is None:
            value = default
        else:
            try:
                value = conv(raw)
            except ValueError:
                raise ConfigError(f"[{self.name}] {key} = {raw!r} is not valid") from None
        self.record[key] = value
        return value

    def str(self, key, default=None):
        return self._conv(key, default, str)

    def int(self, key, default=None):
        return self._conv(key, default, int)

    def float(self, key, default=None):
        return self._conv(key, default, float)

    def floats(self, key, default):
        return self._conv(key, list(default), lambda s: [float(x) for x in s.split(",") if x.strip()])

    def ints(self, key, default):
        return self._conv(key, list(default), lambda s: [int(x) for x in s.split(",") if x.strip()])

    def strs(self, key, default=None):
        return self._conv(key, default, lambda s: [x.strip() for x in s.split(",") if x.strip()])

    def bool(self, key, default):
        def conv(s):
            s = s.lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        return self._conv(key, default, conv)


class _Run:
    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.record: dict = {}
        self.cp = configparser.ConfigParser(interpolation=None)
        self.base = Path.cwd()
        if args.config is not None:
            path = Path(args.config)
            if not path.is_file():
                raise FileNotFoundError(f"config file not found: {path}")
            self.cp.read(path)
            self.base = path.resolve().parent
        run = self.section("run")
        self.seed = args.seed if args.seed is not None else run.int("seed", 0)
        self.threads = args.threads if args.threads is not None else run.int("threads", 1)
        out = args.out if args.out is not None else run.str("out", "out")
        self.record["run"] = {"seed": self.seed}
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        self.out = Path(out)
        if self.out.exists() and not self.out.is_dir():
            raise ConfigError(f"output path is not a directory: {self.out}")
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list = []

    def section(self, name: str) -> _Section:
        return _Section(self.cp, name, self.record)

    def path(self, raw: str) -> Path:
        if raw.startswith("builtin:"):
            return Path(str(resources.files("ptree").joinpath(f"data/{raw[8:]}_panel.csv")))
        p = Path(raw)
        return p if p.is_absolute() else self.base / p

    def input_path(self, sec: _Section, key: str, required: bool = True) -> Path | None:
        raw = sec.str(key)
        if raw is None:
            if required:
                raise ConfigError(f"[{sec.name}] {key} is required for '{self.command}'")
            return None
        p = self.path(raw)
        if not p.exists():
            raise FileNotFoundError(f"input not found: {p}")
        return p

    # ---------------------------------------------------------- writers

    def _target(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_text(self, name: str, text: str) -> None:
        self._target(name).write_text(text)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, _dumps(obj))

    def write_rows(self, name: str, header, rows) -> None:
        with self._target(name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])

    def write_matrix(self, name: str, periods, labels, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        rows = ([int(p), *values[i]] for i, p in enumerate(periods))
        self.write_rows(name, ["period", *labels], rows)

    def write_manifest(self) -> None:
        canonical = json.dumps(_clean(self.record), sort_keys=True, separators=(",", ":"))
        digests = {n: hashlib.sha256((self.out / n).read_bytes()).hexdigest() for n in self.outputs}
        manifest = {
            "command": self.command,
            "config": self.record,
            "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
            "seed": self.seed,
            "threads": self.threads,
            "versions": {"ptree": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "outputs": digests,
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        (self.out / "manifest.json").write_text(_dumps(manifest))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return v


def read_matrix(path) -> tuple:
    """Read a ``period,<col>...`` CSV into ``(periods, labels, values)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["period"]:
        raise ConfigError(f"{path}: first column must be 'period'")
    labels = rows[0][1:]
    periods, values = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(rows[0]):
            raise ConfigError(f"{path}: line {line} has {len(row)} fields, expected {len(rows[0])}")
        try:
            periods.append(int(row[0]))
            values.append([float(x) for x in row[1:]])
        except ValueError:
            raise ConfigError(f"{path}: line {line} is not numeric") from None
    if not periods:
        raise ConfigError(f"{path}: no data rows")
    vals = np.asarray(values, dtype=float).reshape(len(periods), len(labels))
    if not np.isfinite(vals).all():
        raise ConfigError(f"{path}: missing or non-finite values")
    return np.asarray(periods, dtype=np.int64), labels, vals


def _align(periods, table, path) -> np.ndarray:
    tp, _, tv = table
    pos = {int(p): i for i, p in enumerate(tp)}
    missing = [int(p) for p in periods if int(p) not in pos]
    if missing:
        raise ConfigError(f"{path}: no rows for periods {missing[:5]}")
    return tv[[pos[int(p)] for p in periods]]


# ---------------------------------------------------------- data & configs

def _load(run: _Run, ranked: bool = True) -> Panel:
    d = run.section("data")
    path = run.input_path(d, "panel")
    schema = {k: d.str(f"{k}_column", v) for k, v in DEFAULT_SCHEMA.items()}
    chars = d.strs("chars")
    if chars:
        schema["chars"] = chars
    p = load_panel(path, schema)
    if d.bool("winsorize", False):
        p = winsorize_returns(p, d.float("winsor_lo", 0.01), d.float("winsor_hi", 0.99))
    if ranked:
        p = rank_normalize(p, d.float("neutral", 0.0))
    return p


def _window(run: _Run, p: Panel, which: str) -> Panel | None:
    d = run.section("data")
    start, end = d.int(f"{which}_start"), d.int(f"{which}_end")
    if which == "test" and start is None and end is None:
        return None
    mask = period_range_mask(p, start, end)
    if not mask.included.any():
        raise ConfigError(f"[data] {which} window [{start}, {end}] contains no periods")
    return subsample(p, mask)


def _growth(run: _Run) -> GrowthConfig:
    g = run.section("growth")
    return GrowthConfig(grid=tuple(g.floats("grid", DEFAULT_GRID)),
                        max_leaves=g.int("max_leaves", 10),
                        max_depth=g.int("max_depth"),
                        min_leaf_size=g.int("min_leaf_size", 20),
                        leaf_gamma=g.float("leaf_gamma", 1e-4),
                        criterion_epsilon=g.float("criterion_epsilon"),
                        full_recompute=g.bool("full_recompute", False))


def _forest_config(run: _Run, tree_cfg: GrowthConfig) -> ForestConfig:
    f = run.section("forest")
    return ForestConfig(num_trees=f.int("num_trees", 1000),
                        chars_per_tree=f.int("chars_per_tree", 20),
                        tree_config=tree_cfg, seed=run.seed,
                        split_mode=f.str("split_mode", "goal_oriented"),
                        bootstrap=f.bool("bootstrap", True))


def _ppy(run: _Run) -> int:
    v = run.section("data").int("periods_per_year", 12)
    if v < 1:
        raise ConfigError("[data] periods_per_year must be positive")
    return v


def _char_index(p: Panel, name: str) -> int:
    try:
        return list(p.char_names).index(name)
    except ValueError:
        raise ConfigError(f"unknown characteristic {name!r}; have {list(p.char_names)}") from None


# ---------------------------------------------------------------- commands

def cmd_ingest(run: _Run) -> None:
    p = _load(run, ranked=False)
    counts = p.counts()
    missing = np.isnan(np.asarray(p.chars)).mean(axis=0) if p.n_records else np.zeros(p.n_chars)
    write_panel(p, run._target("panel.csv"))
    run.write_text("load_report.json", p.load_report.to_json() + "\n")
    run.write_json("summary.json", {
        "n_periods": p.n_periods, "n_records": p.n_records, "n_chars": p.n_chars,
        "char_names": list(p.char_names),
        "first_period": int(p.periods[0]), "last_period": int(p.periods[-1]),
        "records_per_period": {"min": int(counts.min()), "median": float(np.median(counts)),
                               "max": int(counts.max())},
        "missing_share": dict(zip(p.char_names, missing.tolist())),
    })


def cmd_grow(run: _Run) -> None:
    p = _load(run)
    train, test = _window(run, p, "train"), _window(run, p, "test")
    cfg = _growth(run)
    ppy = _ppy(run)
    grown = grow_tree(train, cfg, threads=run.threads)
    names = list(train.char_names)
    med = grown.leaves.median_counts()
    R = np.asarray(grown.leaves.returns)
    labels = [f"leaf{j}" for j in range(R.shape[1])]
    run.write_text("tree.json", grown.tree.to_json() + "\n")
    run.write_text("tree.dot", grown.tree.to_dot(names, med))
    run.write_matrix("leaf_returns.csv", train.periods, labels, R)
    run.write_matrix("factor.csv", train.periods, ["factor"], grown.factor)
    report = {
        "n_leaves": grown.tree.n_leaves,
        "sharpe_annualized": grown.mve.sharpe_annualized,
        "leaf_weights": grown.mve.weights,
        "splits": [{"step": i + 1, "node": s.node, "char": names[s.rule.char_index],
                    "threshold": s.rule.threshold, "criterion": s.criterion}
                   for i, s in enumerate(grown.steps)],
        "leaves": leaf_table(R, grown.leaves.counts, market_returns(train)) if train.n_periods > 2 else [],
    }
    if test is not None:
        f_test = grown.factor_on(test)
        report["test_sharpe_annualized"] = _safe_sharpe(f_test, ppy)
        run.write_matrix("factor_test.csv", test.periods, ["factor"], f_test)
    run.write_json("report.json", report)


def _safe_sharpe(x, ppy):
    try:
        return annualized_sharpe(x, ppy)
    except ValueError:
        return None


def cmd_boost(run: _Run) -> None:
    p = _load(run)
    train, test = _window(run, p, "train"), _window(run, p, "test")
    b = run.section("boost")
    ppy = _ppy(run)
    init_path = run.input_path(b, "initial_factors", required=False)
    init = init_test = None
    if init_path is not None:
        table = read_matrix(init_path)
        init = FactorSet(_align(train.periods, table, init_path),
                         tuple(FactorSource(lab, None) for lab in table[1]))
        if test is not None:
            init_test = _align(test.periods, table, init_path)
    cfg = BoostConfig(num_trees=b.int("num_trees", 1), factor_gamma=b.float("factor_gamma", 1e-5),
                      tree_config=_growth(run), initial_factors=init)
    res = boost(train, cfg, threads=run.threads)
    run.write_json("trees.json", {"trees": [t.to_dict() for t in res.trees]})
    run.write_matrix("factors.csv", train.periods, res.factors.labels, res.factors.series)
    report = boost_report(res, ppy)
    report["mve_weights"] = res.mve.weights
    report["expanding"] = expanding_factor_test(res.factors.series) if train.n_periods > res.factors.n_factors + 1 else []
    if test is not None:
        ft = res.tree_factors_on(test)
        if init_test is not None:
            ft = np.column_stack([init_test, ft])
        run.write_matrix("factors_test.csv", test.periods, res.factors.labels, ft)
        report["test_sharpe_annualized"] = _safe_sharpe(ft @ res.mve.weights, ppy)
    run.write_json("report.json", report)


def _forest_json(forest) -> dict:
    return {"trees": [{"tree": ft.tree.to_dict(), "offered_chars": list(ft.offered_chars),
                       "bootstrap_periods": ft.bootstrap_periods.tolist()} for ft in forest.trees]}


def cmd_forest(run: _Run) -> None:
    p = _load(run)
    train = _window(run, p, "train")
    cfg = _forest_config(run, _growth(run))
    depths = run.section("forest").ints("importance_depths", (1, 2, 3))
    forest = grow_forest(train, cfg, threads=run.threads)
    run.write_json("forest.json", _forest_json(forest))
    rows = importance_table(forest, train.char_names, depths)
    run.write_rows("importance.csv", ["J", "char", "offered", "selected_topJ", "probability"],
                   ([r["J"], r["char"], r["offered"], r["selected_topJ"], r["probability"]] for r in rows))
    run.write_matrix("stacked_leaves.csv", train.periods, forest.stacked_leaves.column_labels,
                     forest.stacked_leaves.values)


def _load_forest(path: Path) -> list:
    d = json.loads(path.read_text())
    return [ForestTree(PTree.from_dict(t["tree"]), tuple(t["offered_chars"]),
                       np.asarray(t["bootstrap_periods"], dtype=np.int64)) for t in d["trees"]]


def cmd_sdf_sweep(run: _Run) -> None:
    p = _load(run)
    train, test = _window(run, p, "train"), _window(run, p, "test")
    if test is None:
        raise ConfigError("[data] test_start/test_end are required for 'sdf-sweep'")
    s = run.section("sweep")
    gammas = s.floats("gammas", SDF_GAMMAS)
    complexities = s.floats("complexities", SDF_COMPLEXITIES)
    forest_path = run.input_path(s, "forest", required=False)
    if forest_path is not None:
        trees = _load_forest(forest_path)
    else:
        trees = list(grow_forest(train, _forest_config(run, _growth(run)), threads=run.threads).trees)
    R_tr = stacked_leaf_returns(trees, train)
    R_te = stacked_leaf_returns(trees, test)
    cells = sdf_sweep_matrices(R_tr, R_te, gammas, complexities, _ppy(run), run.threads)
    run.write_rows("sweep.csv", ["gamma", "complexity", "P", "oos_sharpe", "oos_pricing_error"],
                   ([c.gamma, c.complexity, c.P, c.oos_sharpe, c.oos_pricing_error] for c in cells))


def cmd_evaluate(run: _Run) -> None:
    e = run.section("evaluate")
    a_path = run.input_path(e, "assets")
    f_path = run.input_path(e, "factors", required=False)
    ap, alabels, A = read_matrix(a_path)
    if f_path is not None:
        ftable = read_matrix(f_path)
        F, flabels = _align(ap, ftable, f_path), ftable[1]
    else:
        F, flabels = np.zeros((len(ap), 0)), []
    rep = ts_regress(A, F)
    summary = pricing_summary(A, F)
    summary["factors"] = list(flabels)
    if F.shape[1] and A.shape[1] > F.shape[1]:
        cs = cross_sectional_r2(A, F)
        summary["cs_r2"] = cs.r_squared
        summary["lambda"] = cs.lambda_
    run.write_json("pricing_summary.json", summary)
    header = ["asset", "alpha", "alpha_se", "alpha_t", "r_squared", *[f"beta_{f}" for f in flabels]]
    rows = ([lab, rep.alpha[i], rep.alpha_se[i], rep.alpha_t_stat[i], rep.r_squared[i], *rep.betas[i]]
            for i, lab in enumerate(alabels))
    run.write_rows("alphas.csv", header, rows)
    if F.shape[1] > 1:
        exp = expanding_factor_test(F)
        run.write_rows("expanding.csv", ["factor", "alpha", "t_stat", "r_squared"],
                       ([flabels[k], r["alpha"], r["t_stat"], r["r_squared"]]
                        for k, r in enumerate(exp) if r is not None))


def cmd_simulate(run: _Run) -> None:
    s = run.section("sim")
    base = SimConfig()
    cfg = SimConfig(n_assets=s.int("n_assets", base.n_assets), t_train=s.int("t_train", base.t_train),
                    t_test=s.int("t_test", base.t_test), n_chars=s.int("n_chars", base.n_chars),
                    kappa=s.float("kappa", base.kappa), coefs=tuple(s.floats("coefs", base.coefs)),
                    sigma_eps=s.float("sigma_eps", base.sigma_eps),
                    var1_persistence=s.float("var1_persistence", base.var1_persistence),
                    var1_cross_corr=s.float("var1_cross_corr", base.var1_cross_corr),
                    market_mean=s.float("market_mean", base.market_mean),
                    market_std=s.float("market_std", base.market_std),
                    true_char_indices=tuple(s.ints("true_char_indices", base.true_char_indices)),
                    seed=run.seed, start_period=s.int("start_period", base.start_period))
    res = simulate_panel(cfg)
    periods = res.panel.periods
    write_panel(res.panel, run._target("panel.csv"))
    truth = json.loads(cfg.to_json())
    truth["train_periods"] = [int(periods[0]), int(periods[cfg.t_train - 1])] if cfg.t_train else None
    truth["test_periods"] = [int(periods[cfg.t_train]), int(periods[-1])] if cfg.t_test else None
    run.write_json("truth.json", truth)
    run.write_matrix("market.csv", periods, ["mkt"], res.market)


def cmd_char_eval(run: _Run) -> None:
    p = _load(run)
    train = _window(run, p, "train")
    c = run.section("char_eval")
    names = list(train.char_names)
    root = _char_index(train, c.str("root_char", names[0]))
    child = _char_index(train, c.str("child_char", names[min(1, len(names) - 1)]))
    spec = baseline_spec(root, child, c.float("root_threshold", -0.2),
                         c.float("left_threshold", -0.6), c.float("right_threshold", 0.2))
    base = grow_fixed_tree(spec)
    cfg = _growth(run)
    ks = [_char_index(train, n) for n in (c.strs("chars") or names)]
    ppy = _ppy(run)

    def value(k):
        return incremental_char_value(base, train, k, cfg)

    if run.threads > 1:
        with ThreadPoolExecutor(max_workers=run.threads) as ex:
            vals = list(ex.map(value, ks))
    else:
        vals = [value(k) for k in ks]
    order = sorted(range(len(ks)), key=lambda i: (-vals[i], ks[i]))
    run.write_text("base_tree.json", base.to_json() + "\n")
    run.write_rows("char_eval.csv", ["rank", "char", "criterion", "sharpe_annualized"],
                   ([r + 1, names[ks[i]], vals[i], vals[i] * math.sqrt(ppy) if math.isfinite(vals[i]) else None]
                    for r, i in enumerate(order)))


HANDLERS = {"ingest": cmd_ingest, "grow": cmd_grow, "boost": cmd_boost, "forest": cmd_forest,
            "sdf-sweep": cmd_sdf_sweep, "evaluate": cmd_evaluate, "simulate": cmd_simulate,
            "char-eval": cmd_char_eval}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ptree", description="Panel trees for asset pricing.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--threads", type=int, metavar="N")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        run = _Run(args.command, args)
        HANDLERS[args.command](run)
        run.write_manifest()
    except (OSError, ValueError, KeyError, configparser.Error, np.linalg.LinAlgError, PanelError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
        print(f"ptree {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0
