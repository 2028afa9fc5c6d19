"""Panel trees: structure, leaf portfolios and greedy growth on a global criterion.

A tree's split rules are time-invariant; membership of each leaf is
re-evaluated every period. Candidate splits are scored by the tangency
Sharpe ratio of the factor formed from *all* leaves (plus any incumbent
factors), not by a node-local loss.
"""

from __future__ import annotations

import json
import logging
import threading
import warnings
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .mve import (LEAF_GAMMA, DegeneratePortfolioError, FactorSet, MveSolution,
                  ReturnMatrix, SingularSystemError, criterion_value, default_epsilon,
                  ridge_mve_weights)
from .panel import Panel

log = logging.getLogger(__name__)

DEFAULT_GRID = (-0.6, -0.2, 0.2, 0.6)
# Candidates within this relative distance of the best value count as ties.
TIE_RTOL = 1e-10
_CHAR_CHUNK = 8


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class SplitRule:
    char_index: int
    threshold: float


@dataclass(frozen=True)
class Internal:
    rule: SplitRule
    left: int
    right: int


@dataclass(frozen=True)
class Leaf:
    leaf_id: int


@dataclass(frozen=True)
class Candidate:
    node: int
    rule: SplitRule


@dataclass(frozen=True)
class PTree:
    """Binary tree of split rules. Node 0 is the root.

    Leaf ids are assigned in increasing node-index order, so leaf ``j`` of
    :class:`LeafPortfolios` is the ``j``-th leaf node by index.
    """

    nodes: tuple = (Leaf(0),)
    split_order: tuple = ()

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "split_order", tuple(int(i) for i in self.split_order))
        parents = {}
        for i, nd in enumerate(nodes):
            if isinstance(nd, Internal):
                for c in (nd.left, nd.right):
                    if not 0 < c < len(nodes) or c in parents:
                        raise TreeError(f"node {c} has an invalid or repeated parent link")
                    parents[c] = i
            elif not isinstance(nd, Leaf):
                raise TreeError(f"unknown node type {type(nd).__name__}")
        if len(parents) != len(nodes) - 1:
            raise TreeError("tree is not connected")
        leaf_ids = [nd.leaf_id for nd in nodes if isinstance(nd, Leaf)]
        if sorted(leaf_ids) != list(range(len(leaf_ids))):
            raise TreeError("leaf ids must be 0..L-1")
        internal = [i for i, nd in enumerate(nodes) if isinstance(nd, Internal)]
        if sorted(self.split_order) != internal:
            raise TreeError("split_order must list every internal node exactly once")
        # Validate acyclicity through reachability from the root.
        seen, stack = set(), [0]
        while stack:
            i = stack.pop()
            if i in seen:
                raise TreeError("cycle detected")
            seen.add(i)
            if isinstance(nodes[i], Internal):
                stack += [nodes[i].left, nodes[i].right]
        if len(seen) != len(nodes):
            raise TreeError("unreachable nodes")

    @property
    def leaf_nodes(self) -> list:
        return [i for i, nd in enumerate(self.nodes) if isinstance(nd, Leaf)]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_nodes)

    @property
    def n_splits(self) -> int:
        return len(self.split_order)

    def parents(self) -> dict:
        out = {}
        for i, nd in enumerate(self.nodes):
            if isinstance(nd, Internal):
                out[nd.left] = i
                out[nd.right] = i
        return out

    def depth(self, node: int) -> int:
        par = self.parents()
        d = 0
        while node != 0:
            node = par[node]
            d += 1
        return d

    def path(self, node: int) -> str:
        """Root-to-node path as a string of 'L'/'R' steps."""
        par = self.parents()
        steps = []
        while node != 0:
            p = par[node]
            steps.append("L" if self.nodes[p].left == node else "R")
            node = p
        return "".join(reversed(steps))

    def split(self, node: int, rule: SplitRule) -> "PTree":
        if not isinstance(self.nodes[node], Leaf):
            raise TreeError(f"node {node} is not a leaf")
        nodes = list(self.nodes)
        left, right = len(nodes), len(nodes) + 1
        nodes[node] = Internal(rule, left, right)
        nodes += [Leaf(-1), Leaf(-1)]
        relabeled, j = [], 0
        for nd in nodes:
            if isinstance(nd, Leaf):
                nd = Leaf(j)
                j += 1
            relabeled.append(nd)
        return PTree(tuple(relabeled), self.split_order + (node,))

    def split_chars(self, first: int | None = None) -> list:
        order = self.split_order if first is None else self.split_order[:first]
        return [self.nodes[i].rule.char_index for i in order]

    def max_char_index(self) -> int:
        return max((self.nodes[i].rule.char_index for i in self.split_order), default=-1)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        rows = []
        for nd in self.nodes:
            if isinstance(nd, Internal):
                rows.append({"kind": "internal", "char": nd.rule.char_index,
                             "threshold": nd.rule.threshold, "left": nd.left,
                             "right": nd.right, "leaf_id": None})
            else:
                rows.append({"kind": "leaf", "char": None, "threshold": None,
                             "left": None, "right": None, "leaf_id": nd.leaf_id})
        return {"nodes": rows, "split_order": list(self.split_order)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PTree":
        nodes = []
        for row in d["nodes"]:
            if row["kind"] == "internal":
                nodes.append(Internal(SplitRule(int(row["char"]), float(row["threshold"])),
                                      int(row["left"]), int(row["right"])))
            elif row["kind"] == "leaf":
                nodes.append(Leaf(int(row["leaf_id"])))
            else:
                raise TreeError(f"unknown node kind {row['kind']!r}")
        return cls(tuple(nodes), tuple(d.get("split_order", ())))

    @classmethod
    def from_json(cls, text: str) -> "PTree":
        return cls.from_dict(json.loads(text))

    def to_dot(self, char_names: Sequence[str] | None = None,
               median_counts: Sequence[float] | None = None) -> str:
        """Graphviz source; internal nodes show the split, leaves the median count."""
        lines = ["digraph ptree {", '  node [shape=box, fontname="Helvetica"];']
        for i, nd in enumerate(self.nodes):
            if isinstance(nd, Internal):
                k = nd.rule.char_index
                name = char_names[k] if char_names is not None else f"z{k}"
                step = self.split_order.index(i) + 1
                lines.append(f'  n{i} [label="N{i} (split {step})\\n{name} <= {nd.rule.threshold:g}"];')
            else:
                label = f"leaf {nd.leaf_id}"
                if median_counts is not None:
                    label += f"\\nmedian n = {median_counts[nd.leaf_id]:g}"
                lines.append(f'  n{i} [shape=ellipse, label="{label}"];')
        for i, nd in enumerate(self.nodes):
            if isinstance(nd, Internal):
                lines.append(f'  n{i} -> n{nd.left} [label="yes"];')
                lines.append(f'  n{i} -> n{nd.right} [label="no"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class GrowthConfig:
    grid: tuple = DEFAULT_GRID
    max_leaves: int = 10
    max_depth: int | None = None
    min_leaf_size: int = 20
    leaf_gamma: float = LEAF_GAMMA
    criterion_epsilon: float | None = None
    full_recompute: bool = False

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be non-empty and strictly increasing")
        if not all(-1.0 < g < 1.0 for g in grid):
            raise ValueError("grid values must lie in (-1, 1)")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be at least 2")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be at least 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.leaf_gamma < 0:
            raise ValueError("leaf_gamma must be nonnegative")


@dataclass(frozen=True, eq=False)
class LeafPortfolios:
    returns: ReturnMatrix
    counts: np.ndarray
    tree: PTree

    def median_counts(self) -> np.ndarray:
        return np.median(self.counts, axis=0)


@dataclass(frozen=True)
class SplitStep:
    node: int
    rule: SplitRule
    criterion: float


@dataclass(frozen=True, eq=False)
class GrownTree:
    tree: PTree
    leaves: LeafPortfolios
    factor: np.ndarray
    mve: MveSolution
    steps: tuple = field(default=())

    @property
    def root_only(self) -> bool:
        return self.tree.n_splits == 0

    def factor_on(self, panel: Panel) -> np.ndarray:
        """Apply the frozen tree and its leaf weights to another panel."""
        return np.asarray(leaf_returns(self.tree, panel).returns) @ self.mve.weights


# -- data preparation ----------------------------------------------------------


class _Design:
    """Flat record arrays for growth, optionally over a bootstrap period multiset."""

    def __init__(self, panel: Panel, periods=None):
        if periods is None:
            rows = np.arange(panel.n_records)
            t = np.asarray(panel.period_index)
            T = panel.n_periods
        else:
            periods = np.asarray(periods, dtype=np.int64)
            bounds = panel.period_bounds()
            rows = np.concatenate([np.arange(bounds[p], bounds[p + 1]) for p in periods])
            t = np.repeat(np.arange(len(periods)), bounds[periods + 1] - bounds[periods])
            T = len(periods)
        self.T = T
        self.panel = panel
        self.rows = rows
        self.t = t
        self.w = np.asarray(panel.weight_base)[rows]
        self.r = np.asarray(panel.returns)[rows]
        self.wr = self.w * self.r
        self.z = np.asarray(panel.chars)[rows]
        self.K = self.z.shape[1]
        self._bins = {}

    def bins(self, grid: tuple) -> np.ndarray:
        """Per record and characteristic, the count of grid values strictly below z.

        ``z <= grid[j]`` holds exactly when ``bins <= j``.
        """
        if grid not in self._bins:
            self._bins[grid] = _panel_bins(self.panel, grid)[self.rows]
        return self._bins[grid]

    def sums(self, idx: np.ndarray):
        tt = self.t[idx]
        W = np.bincount(tt, weights=self.w[idx], minlength=self.T)
        WR = np.bincount(tt, weights=self.wr[idx], minlength=self.T)
        C = np.bincount(tt, minlength=self.T)
        return W, WR, C


_BIN_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()
_BIN_LOCK = threading.Lock()


def _panel_bins(panel: Panel, grid: tuple) -> np.ndarray:
    with _BIN_LOCK:
        per_panel = _BIN_CACHE.setdefault(panel, {})
        if grid not in per_panel:
            g = np.asarray(grid)
            z = np.asarray(panel.chars)
            b = np.empty(z.shape, dtype=np.int16)
            for k in range(z.shape[1]):
                b[:, k] = np.searchsorted(g, z[:, k], side="left")
            b.setflags(write=False)
            per_panel[grid] = b
        return per_panel[grid]


def _route(tree: PTree, z: np.ndarray) -> np.ndarray:
    """Node index reached by every row of ``z``."""
    node = np.zeros(len(z), dtype=np.int64)
    for i, nd in enumerate(tree.nodes):
        if isinstance(nd, Internal):
            at = node == i
            if not at.any():
                continue
            go_left = z[at, nd.rule.char_index] <= nd.rule.threshold
            node[at] = np.where(go_left, nd.left, nd.right)
    return node


def _check_chars(tree: PTree, K: int) -> None:
    if tree.max_char_index() >= K:
        raise TreeError(f"tree uses characteristic {tree.max_char_index()} but panel has K={K}")


def assign_leaves(tree: PTree, p: Panel) -> np.ndarray:
    """Leaf id of every panel record (go left when z <= threshold)."""
    _check_chars(tree, p.n_chars)
    node = _route(tree, np.asarray(p.chars))
    leaf_id = np.full(len(tree.nodes), -1, dtype=np.int64)
    for i, nd in enumerate(tree.nodes):
        if isinstance(nd, Leaf):
            leaf_id[i] = nd.leaf_id
    return leaf_id[node]


def _leaf_portfolios(tree: PTree, d: _Design, warn: bool = True) -> LeafPortfolios:
    _check_chars(tree, d.K)
    node = _route(tree, d.z)
    leaf_id = np.full(len(tree.nodes), -1, dtype=np.int64)
    for i, nd in enumerate(tree.nodes):
        if isinstance(nd, Leaf):
            leaf_id[i] = nd.leaf_id
    L = tree.n_leaves
    key = d.t * L + leaf_id[node]
    W = np.bincount(key, weights=d.w, minlength=d.T * L).reshape(d.T, L)
    WR = np.bincount(key, weights=d.wr, minlength=d.T * L).reshape(d.T, L)
    C = np.bincount(key, minlength=d.T * L).reshape(d.T, L)
    empty = W <= 0
    if warn and empty.any():
        warnings.warn(f"{int(empty.sum())} empty (leaf, period) cells set to zero return",
                      RuntimeWarning, stacklevel=3)
    R = np.divide(WR, W, out=np.zeros_like(WR), where=~empty)
    C = np.where(empty, 0, C)
    return LeafPortfolios(ReturnMatrix(R, tuple(f"leaf{j}" for j in range(L))), C, tree)


def leaf_returns(tree: PTree, p: Panel) -> LeafPortfolios:
    """Value-weighted leaf portfolio returns (T x L) and per-cell stock counts.

    An empty (leaf, period) cell gets return 0 and count 0, with a warning.
    """
    return _leaf_portfolios(tree, _Design(p))


def enumerate_candidates(tree: PTree, p: Panel, cfg: GrowthConfig,
                         chars: Sequence[int] | None = None) -> list:
    """All (leaf, characteristic, threshold) splits, in tie-break order."""
    ks = _allowed(chars, p.n_chars)
    out = []
    for node in _splittable(tree, cfg):
        for k in ks:
            for g in cfg.grid:
                out.append(Candidate(node, SplitRule(int(k), g)))
    return out


def _allowed(chars, K) -> np.ndarray:
    if chars is None:
        return np.arange(K)
    ks = np.unique(np.asarray(list(chars), dtype=np.int64))
    if ks.size and (ks[0] < 0 or ks[-1] >= K):
        raise TreeError("characteristic index out of range")
    return ks


def _splittable(tree: PTree, cfg: GrowthConfig) -> list:
    leaves = tree.leaf_nodes
    if cfg.max_depth is None:
        return leaves
    return [n for n in leaves if tree.depth(n) < cfg.max_depth]


# -- scoring -------------------------------------------------------------------


def _incumbent_matrix(incumbents, T: int, periods=None) -> np.ndarray:
    if incumbents is None:
        return np.zeros((T, 0))
    F = np.asarray(incumbents, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if periods is not None:
        F = F[np.asarray(periods)]
    if F.shape[0] != T:
        raise ValueError(f"incumbent factors have {F.shape[0]} periods, panel has {T}")
    return F


def _criterion_batch(f: np.ndarray, inc: np.ndarray, eps: float | None) -> np.ndarray:
    """Tangency Sharpe of [incumbents, f_c] for every column f_c of ``f``."""
    T = f.shape[0]
    M0 = inc.shape[1]
    e = default_epsilon(M0 + 1) if eps is None else eps
    mu_f = f.mean(axis=0)
    fc = f - mu_f
    var_f = np.einsum("tc,tc->c", fc, fc) / T + e
    if M0 == 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.sqrt(mu_f ** 2 / var_f)
        return np.where(var_f > 0, out, -np.inf)
    mu_i = inc.mean(axis=0)
    ic = inc - mu_i
    S_ii = ic.T @ ic / T + e * np.eye(M0)
    S_if = ic.T @ fc / T
    try:
        a = np.linalg.solve(S_ii, mu_i)
        B = np.linalg.solve(S_ii, S_if)
    except np.linalg.LinAlgError:
        return np.full(f.shape[1], -np.inf)
    base = float(mu_i @ a)
    schur = var_f - np.einsum("mc,mc->c", S_if, B)
    resid = mu_f - S_if.T @ a
    with np.errstate(divide="ignore", invalid="ignore"):
        val2 = base + resid ** 2 / schur
        out = np.sqrt(val2)
    return np.where((schur > 0) & (val2 >= 0), out, -np.inf)


def _candidate_value_full(tree: PTree, cand: Candidate, d: _Design, cfg: GrowthConfig,
                          inc: np.ndarray) -> float:
    """Score one candidate by materializing the split (slow reference path)."""
    trial = tree.split(cand.node, cand.rule)
    lp = _leaf_portfolios(trial, d, warn=False)
    children = [trial.nodes[cand.node].left, trial.nodes[cand.node].right]
    for c in children:
        if lp.counts[:, trial.nodes[c].leaf_id].min() < cfg.min_leaf_size:
            return -np.inf
    try:
        sol = ridge_mve_weights(lp.returns, cfg.leaf_gamma)
        f = np.asarray(lp.returns) @ sol.weights
        return criterion_value(np.column_stack([inc, f]), cfg.criterion_epsilon)
    except (SingularSystemError, DegeneratePortfolioError, np.linalg.LinAlgError, ValueError) as exc:
        log.debug("candidate %s scored -inf: %s", cand, exc)
        return -np.inf


class _Search:
    """Incremental state for greedy growth on one design."""

    def __init__(self, d: _Design, tree: PTree, cfg: GrowthConfig, inc: np.ndarray,
                 chars: np.ndarray):
        self.d, self.tree, self.cfg, self.inc, self.chars = d, tree, cfg, inc, chars
        node = _route(tree, d.z)
        order = np.argsort(node, kind="stable")
        cuts = np.searchsorted(node[order], np.arange(len(tree.nodes) + 1))
        self.members = {n: order[cuts[n]:cuts[n + 1]] for n in tree.leaf_nodes}
        self.stats = {n: d.sums(self.members[n]) for n in tree.leaf_nodes}
        self.hist = {}

    def leaf_matrix(self) -> np.ndarray:
        cols = []
        for n in self.tree.leaf_nodes:
            W, WR, _ = self.stats[n]
            cols.append(np.divide(WR, W, out=np.zeros_like(WR), where=W > 0))
        return np.column_stack(cols)

    def _histograms(self, node: int):
        """Per-candidate child sums for ``node``: arrays of shape (T, k * G)."""
        if node in self.hist:
            return self.hist[node]
        d, G = self.d, len(self.cfg.grid)
        idx = self.members[node]
        tt = d.t[idx]
        bins = d.bins(self.cfg.grid)
        Gp = G + 1
        outs = {name: [] for name in ("WL", "WRL", "CL", "WRt", "WRRt", "CRt")}
        for start in range(0, len(self.chars), _CHAR_CHUNK):
            ks = self.chars[start:start + _CHAR_CHUNK]
            nk = len(ks)
            key = ((np.arange(nk)[None, :] * d.T + tt[:, None]) * Gp
                   + bins[np.ix_(idx, ks)]).ravel()
            size = nk * d.T * Gp
            H = [np.bincount(key, weights=np.repeat(d.w[idx], nk), minlength=size),
                 np.bincount(key, weights=np.repeat(d.wr[idx], nk), minlength=size),
                 np.bincount(key, minlength=size).astype(float)]
            for name_l, name_r, h in zip(("WL", "WRL", "CL"), ("WRt", "WRRt", "CRt"), H):
                h = h.reshape(nk, d.T, Gp)
                left = np.cumsum(h, axis=2)[:, :, :G]
                right = np.cumsum(h[:, :, ::-1], axis=2)[:, :, ::-1][:, :, 1:]
                # (k, T, G) -> (T, k * G), candidates ordered by char then threshold.
                outs[name_l].append(left.transpose(1, 0, 2).reshape(d.T, nk * G))
                outs[name_r].append(right.transpose(1, 0, 2).reshape(d.T, nk * G))
        res = {k: np.hstack(v) if v else np.zeros((d.T, 0)) for k, v in outs.items()}
        self.hist[node] = res
        return res

    def score_node(self, node: int) -> np.ndarray:
        cfg, d = self.cfg, self.d
        n_cand = len(self.chars) * len(cfg.grid)
        out = np.full(n_cand, -np.inf)
        _, _, Cn = self.stats[node]
        if n_cand == 0 or Cn.min() < 2 * cfg.min_leaf_size:
            return out
        if cfg.full_recompute:
            for i, cand in enumerate(self._node_candidates(node)):
                out[i] = _candidate_value_full(self.tree, cand, d, cfg, self.inc)
            return out
        h = self._histograms(node)
        feas = ((h["CL"].min(axis=0) >= cfg.min_leaf_size)
                & (h["CRt"].min(axis=0) >= cfg.min_leaf_size)
                & (h["WL"].min(axis=0) > 0) & (h["WRt"].min(axis=0) > 0))
        fi = np.flatnonzero(feas)
        if fi.size == 0:
            return out
        leaves = self.tree.leaf_nodes
        pos = leaves.index(node)
        O = np.delete(self.leaf_matrix(), pos, axis=1)
        Lc = h["WRL"][:, fi] / h["WL"][:, fi]
        Rc = h["WRRt"][:, fi] / h["WRt"][:, fi]
        out[fi] = self._score_columns(O, Lc, Rc)
        return out

    def _score_columns(self, O, Lc, Rc) -> np.ndarray:
        T, m = O.shape
        nc = Lc.shape[1]
        gamma = self.cfg.leaf_gamma
        P = m + 2
        S = np.empty((nc, P, P))
        S[:, :m, :m] = O.T @ O / T
        OL = (O.T @ Lc / T).T
        OR = (O.T @ Rc / T).T
        S[:, :m, m] = OL
        S[:, m, :m] = OL
        S[:, :m, m + 1] = OR
        S[:, m + 1, :m] = OR
        S[:, m, m] = np.einsum("tc,tc->c", Lc, Lc) / T
        S[:, m + 1, m + 1] = np.einsum("tc,tc->c", Rc, Rc) / T
        S[:, m, m + 1] = S[:, m + 1, m] = np.einsum("tc,tc->c", Lc, Rc) / T
        S[:, np.arange(P), np.arange(P)] += gamma
        mu = np.empty((nc, P))
        mu[:, :m] = O.mean(axis=0)
        mu[:, m] = Lc.mean(axis=0)
        mu[:, m + 1] = Rc.mean(axis=0)
        try:
            w = np.linalg.solve(S, mu[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            w = np.full((nc, P), np.nan)
            for c in range(nc):
                try:
                    w[c] = np.linalg.solve(S[c], mu[c])
                except np.linalg.LinAlgError:
                    pass
        scale = np.abs(w).sum(axis=1)
        ok = np.isfinite(scale) & (scale > 0)
        w = np.where(ok[:, None], w / np.where(ok, scale, 1.0)[:, None], 0.0)
        f = O @ w[:, :m].T + Lc * w[:, m] + Rc * w[:, m + 1]
        vals = _criterion_batch(f, self.inc, self.cfg.criterion_epsilon)
        return np.where(ok & np.isfinite(vals), vals, -np.inf)

    def _node_candidates(self, node: int) -> list:
        return [Candidate(node, SplitRule(int(k), g)) for k in self.chars for g in self.cfg.grid]

    def score_all(self, threads: int = 1):
        nodes = _splittable(self.tree, self.cfg)
        if threads > 1 and len(nodes) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                scores = list(ex.map(self.score_node, nodes))
        else:
            scores = [self.score_node(n) for n in nodes]
        return nodes, scores

    def commit(self, cand: Candidate) -> None:
        node, rule = cand.node, cand.rule
        idx = self.members.pop(node)
        go_left = self.d.z[idx, rule.char_index] <= rule.threshold
        self.tree = self.tree.split(node, rule)
        nd = self.tree.nodes[node]
        self.members[nd.left] = idx[go_left]
        self.members[nd.right] = idx[~go_left]
        del self.stats[node]
        self.hist.pop(node, None)
        for c in (nd.left, nd.right):
            self.stats[c] = self.d.sums(self.members[c])


def select_best(values: np.ndarray) -> int | None:
    """Index of the best finite value; near-ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    if values.size == 0 or not np.isfinite(values).any():
        return None
    best = values[np.isfinite(values)].max()
    tol = TIE_RTOL * max(abs(best), 1e-300)
    return int(np.flatnonzero(values >= best - tol)[0])


def _pick(nodes, scores, chars, grid):
    if not nodes:
        return None, -np.inf
    flat = np.concatenate(scores)
    i = select_best(flat)
    if i is None:
        return None, -np.inf
    per = len(chars) * len(grid)
    node = nodes[i // per]
    j = i % per
    rule = SplitRule(int(chars[j // len(grid)]), grid[j % len(grid)])
    return Candidate(node, rule), float(flat[i])


def evaluate_split(candidate: Candidate, tree: PTree, p: Panel, cfg: GrowthConfig,
                   incumbents: FactorSet | None = None) -> float:
    """Criterion value after applying ``candidate``; -inf if a child is too small."""
    d = _Design(p)
    inc = _incumbent_matrix(incumbents, d.T)
    return _candidate_value_full(tree, candidate, d, cfg, inc)


def _finish(tree: PTree, d: _Design, cfg: GrowthConfig, steps) -> GrownTree:
    lp = _leaf_portfolios(tree, d, warn=False)
    sol = ridge_mve_weights(lp.returns, cfg.leaf_gamma)
    factor = np.asarray(lp.returns) @ sol.weights
    return GrownTree(tree=tree, leaves=lp, factor=factor, mve=sol, steps=tuple(steps))


def grow_tree(p: Panel, cfg: GrowthConfig = GrowthConfig(),
              incumbents: FactorSet | None = None, *, chars: Iterable[int] | None = None,
              periods=None, threads: int = 1) -> GrownTree:
    """Greedily grow one tree, each step taking the split that maximizes the criterion.

    Parameters
    ----------
    p : ranked panel (characteristics in [-1, 1]).
    cfg : growth settings.
    incumbents : factors already in the model (T x M, aligned with ``p``);
        candidates are scored on the tangency Sharpe of incumbents plus the
        new tree factor.
    chars : restrict splits to these characteristic indices.
    periods : optional period-position multiset (time bootstrap); the tree,
        leaves and factor are then estimated on the resampled periods.
    threads : worker count for candidate scoring; results do not depend on it.
    """
    d = _Design(p, periods)
    inc = _incumbent_matrix(incumbents, d.T, periods)
    ks = _allowed(chars, d.K)
    search = _Search(d, PTree(), cfg, inc, ks)
    steps = []
    while search.tree.n_leaves < cfg.max_leaves:
        nodes, scores = search.score_all(threads)
        cand, value = _pick(nodes, scores, ks, cfg.grid)
        if cand is None:
            break
        search.commit(cand)
        steps.append(SplitStep(cand.node, cand.rule, value))
    return _finish(search.tree, d, cfg, steps)


def grow_fixed_tree(spec: Sequence[dict]) -> PTree:
    """Build a tree from explicit splits.

    Each entry is ``{"path": "LR...", "char_index": k, "threshold": c}`` where
    ``path`` locates the node from the root ('' is the root). Parents must be
    listed before children.
    """
    tree = PTree()
    by_path = {"": 0}
    for entry in spec:
        path = str(entry.get("path", ""))
        if any(ch not in "LR" for ch in path):
            raise TreeError(f"invalid path {path!r}")
        if path not in by_path:
            raise TreeError(f"path {path!r} does not name an existing leaf")
        node = by_path[path]
        if not isinstance(tree.nodes[node], Leaf):
            raise TreeError(f"path {path!r} is split twice")
        thr = float(entry["threshold"])
        if not -1.0 < thr < 1.0:
            raise TreeError("threshold must lie in (-1, 1)")
        tree = tree.split(node, SplitRule(int(entry["char_index"]), thr))
        nd = tree.nodes[node]
        by_path[path + "L"] = nd.left
        by_path[path + "R"] = nd.right
    return tree


def baseline_spec(root_char: int, child_char: int, root_threshold: float = -0.2,
                  left_threshold: float = -0.6, right_threshold: float = 0.2) -> list:
    """Three-layer baseline: split on ``root_char``, then both children on ``child_char``."""
    return [{"path": "", "char_index": root_char, "threshold": root_threshold},
            {"path": "L", "char_index": child_char, "threshold": left_threshold},
            {"path": "R", "char_index": child_char, "threshold": right_threshold}]


def incremental_char_value(base: PTree, p: Panel, char_index: int,
                           cfg: GrowthConfig = GrowthConfig()) -> float:
    """Best single-tree criterion over one extra split on ``char_index``."""
    d = _Design(p)
    _check_chars(base, d.K)
    search = _Search(d, base, cfg, np.zeros((d.T, 0)), _allowed([char_index], d.K))
    _, scores = search.score_all()
    if not scores:
        return -np.inf
    return float(np.max(np.concatenate(scores)))


def grow_random_tree(p: Panel, cfg: GrowthConfig, rng: np.random.Generator, *,
                     chars: Iterable[int] | None = None, periods=None,
                     max_attempts: int = 1000) -> PTree:
    """Grow by uniformly random feasible (leaf, characteristic, threshold) splits.

    Only stock counts are consulted, never returns. An infeasible draw is
    redrawn; after ``max_attempts`` failures in a row the tree stops.
    """
    d = _Design(p, periods)
    ks = _allowed(chars, d.K)
    tree = PTree()
    members = {0: np.arange(len(d.t))}
    while tree.n_leaves < cfg.max_leaves:
        nodes = _splittable(tree, cfg)
        if not nodes or ks.size == 0:
            break
        for _ in range(max_attempts):
            node = nodes[rng.integers(len(nodes))]
            k = int(ks[rng.integers(len(ks))])
            g = cfg.grid[rng.integers(len(cfg.grid))]
            idx = members[node]
            left = d.z[idx, k] <= g
            cl = np.bincount(d.t[idx[left]], minlength=d.T)
            cr = np.bincount(d.t[idx[~left]], minlength=d.T)
            if cl.min() >= cfg.min_leaf_size and cr.min() >= cfg.min_leaf_size:
                tree = tree.split(node, SplitRule(k, g))
                nd = tree.nodes[node]
                members[nd.left] = idx[left]
                members[nd.right] = idx[~left]
                del members[node]
                break
        else:
            break
    return tree
