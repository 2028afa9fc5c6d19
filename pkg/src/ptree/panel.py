"""Unbalanced return/characteristic panels.

Records are stored in long format, sorted by period: one row per
(period, asset) with its excess return, value-weight basis and raw
characteristics. ``period_index`` maps each row to its position in
``periods``.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata


class PanelError(ValueError):
    """Raised on malformed panel input or invariant violations."""


def _frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_unique(periods, pidx, ids) -> None:
    try:
        _, codes = np.unique(ids, return_inverse=True)
    except TypeError:
        codes = np.unique(np.array([repr(a) for a in ids]), return_inverse=True)[1]
    key = pidx * (int(codes.max(initial=0)) + 1) + codes
    uniq, first, counts = np.unique(key, return_index=True, return_counts=True)
    if np.any(counts > 1):
        i = first[np.argmax(counts > 1)]
        raise PanelError(f"duplicate record for (period={periods[pidx[i]]}, asset={ids[i]})")


@dataclass(frozen=True)
class LoadReport:
    rows_read: int
    rows_dropped: int
    reasons: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"rows_read": self.rows_read, "rows_dropped": self.rows_dropped,
             "reasons": dict(sorted(self.reasons.items()))},
            indent=2, sort_keys=True)


@dataclass(frozen=True, eq=False)
class Panel:
    """Long-format panel of excess returns, weight bases and characteristics.

    Attributes
    ----------
    periods : (T,) int array, strictly increasing (e.g. YYYYMM).
    period_index : (N,) int array, position of each record's period.
    asset_ids : (N,) object array of opaque asset tokens.
    returns : (N,) excess returns.
    weight_base : (N,) nonnegative value-weighting basis.
    chars : (N, K) raw characteristics, NaN where missing.
    char_names : K labels.
    """

    periods: np.ndarray
    period_index: np.ndarray
    asset_ids: np.ndarray
    returns: np.ndarray
    weight_base: np.ndarray
    chars: np.ndarray
    char_names: tuple
    load_report: LoadReport | None = None

    def __post_init__(self):
        periods = np.asarray(self.periods, dtype=np.int64)
        pidx = np.asarray(self.period_index, dtype=np.int64)
        chars = np.asarray(self.chars, dtype=float)
        if chars.ndim == 1:
            chars = chars.reshape(-1, len(self.char_names))
        n = len(pidx)
        if len(periods) == 0:
            raise PanelError("panel has no periods")
        if np.any(np.diff(periods) <= 0):
            raise PanelError("periods must be strictly increasing")
        if not (len(self.asset_ids) == len(self.returns) == len(self.weight_base) == n):
            raise PanelError("record arrays have inconsistent lengths")
        if chars.shape != (n, len(self.char_names)):
            raise PanelError(
                f"chars has shape {chars.shape}, expected ({n}, {len(self.char_names)})")
        if n and (pidx.min() < 0 or pidx.max() >= len(periods)):
            raise PanelError("period_index out of range")
        if np.any(np.diff(pidx) < 0):
            raise PanelError("records must be sorted by period")
        w = np.asarray(self.weight_base, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise PanelError("weight_base must be finite and nonnegative")
        positive = np.bincount(pidx[w > 0], minlength=len(periods))
        if np.any(positive == 0):
            bad = periods[positive == 0][0]
            raise PanelError(f"period {bad} has no record with positive weight_base")
        ret = np.asarray(self.returns, dtype=float)
        if not np.all(np.isfinite(ret)):
            raise PanelError("returns must be finite")
        ids = np.asarray(self.asset_ids, dtype=object)
        _check_unique(periods, pidx, ids)

        object.__setattr__(self, "periods", _frozen(periods))
        object.__setattr__(self, "period_index", _frozen(pidx))
        object.__setattr__(self, "asset_ids", _frozen(ids, dtype=object))
        object.__setattr__(self, "returns", _frozen(ret))
        object.__setattr__(self, "weight_base", _frozen(w))
        object.__setattr__(self, "chars", _frozen(chars))
        object.__setattr__(self, "char_names", tuple(self.char_names))

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def n_chars(self) -> int:
        return len(self.char_names)

    @property
    def n_records(self) -> int:
        return len(self.period_index)

    def period_bounds(self) -> np.ndarray:
        """(T + 1,) row offsets; period t occupies rows bounds[t]:bounds[t+1]."""
        return np.searchsorted(self.period_index, np.arange(self.n_periods + 1))

    def counts(self) -> np.ndarray:
        return np.bincount(self.period_index, minlength=self.n_periods)

    def _replace(self, **changes):
        fields = dict(periods=self.periods, period_index=self.period_index,
                      asset_ids=self.asset_ids, returns=self.returns,
                      weight_base=self.weight_base, chars=self.chars,
                      char_names=self.char_names, load_report=self.load_report)
        fields.update(changes)
        return type(self)(**fields)

    def take_periods(self, positions) -> "Panel":
        """Panel restricted to the given (strictly increasing) period positions."""
        positions = np.asarray(positions, dtype=np.int64)
        rows = np.isin(self.period_index, positions)
        remap = np.full(self.n_periods, -1, dtype=np.int64)
        remap[positions] = np.arange(len(positions))
        changes = dict(periods=self.periods[positions],
                       period_index=remap[self.period_index[rows]],
                       asset_ids=self.asset_ids[rows], returns=self.returns[rows],
                       weight_base=self.weight_base[rows], chars=self.chars[rows])
        if isinstance(self, RankedPanel):
            changes["missing_mask"] = self.missing_mask[rows]
        return self._replace(**changes)


@dataclass(frozen=True, eq=False)
class RankedPanel(Panel):
    """Panel whose characteristics are rank-mapped into [-1, 1] per period.

    ``missing_mask[i, k]`` marks characteristics imputed with ``neutral``.
    """

    missing_mask: np.ndarray = None
    neutral: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        mask = np.zeros(self.chars.shape, dtype=bool) if self.missing_mask is None \
            else np.asarray(self.missing_mask, dtype=bool)
        if mask.shape != self.chars.shape:
            raise PanelError("missing_mask shape does not match chars")
        if np.isnan(self.chars).any():
            raise PanelError("ranked characteristics may not contain missing values")
        if np.any(np.abs(self.chars) > 1.0):
            raise PanelError("ranked characteristics must lie in [-1, 1]")
        object.__setattr__(self, "missing_mask", _frozen(mask))

    def _replace(self, **changes):
        changes.setdefault("missing_mask", self.missing_mask)
        changes.setdefault("neutral", self.neutral)
        return super()._replace(**changes)


@dataclass(frozen=True)
class PeriodMask:
    included: np.ndarray

    def __post_init__(self):
        inc = _frozen(self.included, dtype=bool)
        object.__setattr__(self, "included", inc)

    def __and__(self, other: "PeriodMask") -> "PeriodMask":
        return PeriodMask(self.included & other.included)


def make_panel(periods: Sequence[int], asset_ids, returns, weight_base, chars,
               char_names: Sequence[str], period_of=None) -> Panel:
    """Build a Panel from unsorted record arrays.

    ``period_of`` gives each record's period identifier; records are sorted
    stably by period before construction.
    """
    periods = np.asarray(periods, dtype=np.int64)
    period_of = np.asarray(period_of, dtype=np.int64)
    pos = np.searchsorted(periods, period_of)
    if np.any(pos >= len(periods)) or np.any(periods[np.minimum(pos, len(periods) - 1)] != period_of):
        raise PanelError("record period not among panel periods")
    order = np.argsort(pos, kind="stable")
    chars = np.asarray(chars, dtype=float).reshape(len(order), len(char_names))
    return Panel(periods=periods, period_index=pos[order],
                 asset_ids=np.asarray(asset_ids, dtype=object)[order],
                 returns=np.asarray(returns, dtype=float)[order],
                 weight_base=np.asarray(weight_base, dtype=float)[order],
                 chars=chars[order], char_names=tuple(char_names))


DEFAULT_SCHEMA = {"period": "period", "asset_id": "asset_id",
                  "ret": "ret", "weight_base": "weight_base"}


def _parse_float(text: str, line: int, column: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise PanelError(f"line {line}: column {column!r} is not numeric: {text!r}") from None
    if not np.isfinite(value):
        return None
    return value


def load_panel(path, schema: Mapping[str, object] | None = None) -> Panel:
    """Read a delimited panel file with a header row.

    ``schema`` maps the logical names ``period``, ``asset_id``, ``ret`` and
    ``weight_base`` to file columns; an optional ``chars`` entry lists the
    characteristic columns (default: every remaining column, in file order).

    Rows with a missing return or a missing/zero weight base are dropped and
    tallied in ``panel.load_report``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"panel file not found: {path}")
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        col = {name: i for i, name in enumerate(header)}
        for key in ("period", "asset_id", "ret", "weight_base"):
            if schema[key] not in col:
                raise PanelError(f"{path}: missing required column {schema[key]!r}")
        core = {schema[k] for k in ("period", "asset_id", "ret", "weight_base")}
        char_cols = list(schema.get("chars") or [h for h in header if h not in core])
        for c in char_cols:
            if c not in col:
                raise PanelError(f"{path}: missing characteristic column {c!r}")
        ip, ia, ir, iw = (col[schema[k]] for k in ("period", "asset_id", "ret", "weight_base"))
        ic = [col[c] for c in char_cols]

        reasons: Counter = Counter()
        rows_read = 0
        seen: dict = {}
        per, ids, rets, wts, chs = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            rows_read += 1
            if len(row) != len(header):
                raise PanelError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                period = int(row[ip].strip())
            except ValueError:
                raise PanelError(f"line {line}: period {row[ip]!r} is not an integer") from None
            asset = row[ia].strip()
            if asset == "":
                raise PanelError(f"line {line}: empty asset_id")
            key = (period, asset)
            if key in seen:
                raise PanelError(
                    f"line {line}: duplicate record (period={period}, asset={asset}), "
                    f"first seen on line {seen[key]}")
            seen[key] = line
            r = _parse_float(row[ir], line, schema["ret"])
            w = _parse_float(row[iw], line, schema["weight_base"])
            values = [_parse_float(row[i], line, c) for i, c in zip(ic, char_cols)]
            if r is None:
                reasons["missing_return"] += 1
                continue
            if w is None:
                reasons["missing_weight_base"] += 1
                continue
            if w < 0:
                raise PanelError(f"line {line}: negative weight_base {w}")
            if w == 0:
                reasons["zero_weight_base"] += 1
                continue
            per.append(period)
            ids.append(asset)
            rets.append(r)
            wts.append(w)
            chs.append([np.nan if v is None else v for v in values])

    if not per:
        raise PanelError(f"{path}: zero usable periods")
    report = LoadReport(rows_read=rows_read, rows_dropped=sum(reasons.values()),
                        reasons=dict(reasons))
    periods = np.unique(np.asarray(per, dtype=np.int64))
    panel = make_panel(periods, ids, rets, wts,
                       np.asarray(chs, dtype=float).reshape(len(per), len(char_cols)),
                       char_cols, period_of=per)
    return panel._replace(load_report=report)


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def write_panel(panel: Panel, path) -> None:
    """Write a panel in the CSV layout read by :func:`load_panel`."""
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["period", "asset_id", "ret", "weight_base", *panel.char_names])
        periods = panel.periods[panel.period_index]
        for i in range(panel.n_records):
            out.writerow([int(periods[i]), panel.asset_ids[i], _fmt(panel.returns[i]),
                          _fmt(panel.weight_base[i]), *(_fmt(v) for v in panel.chars[i])])


def rank_cross_section(values: np.ndarray) -> np.ndarray:
    """Map one cross-section onto [-1, 1] by average rank; NaN stays NaN.

    Works column-wise on 2-d input. With n non-missing values the rank r
    (1-based, ties averaged) maps to 2 (r - 1) / (n - 1) - 1; a lone value
    maps to 0.
    """
    values = np.asarray(values, dtype=float)
    ranks = rankdata(values, axis=0, nan_policy="omit")
    n = np.sum(~np.isnan(values), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = 2.0 * (ranks - 1.0) / (n - 1.0) - 1.0
    out = np.where((n == 1) & ~np.isnan(values), 0.0, out)
    return out


def rank_normalize(p: Panel, neutral: float = 0.0) -> RankedPanel:
    """Rank-map characteristics per period into [-1, 1]; impute missing as ``neutral``."""
    if not -1.0 <= neutral <= 1.0:
        raise ValueError("neutral must lie in [-1, 1]")
    ranked = np.empty_like(p.chars)
    bounds = p.period_bounds()
    for t in range(p.n_periods):
        lo, hi = bounds[t], bounds[t + 1]
        if hi > lo:
            ranked[lo:hi] = rank_cross_section(p.chars[lo:hi])
    missing = np.isnan(p.chars)
    ranked[missing] = neutral
    return RankedPanel(periods=p.periods, period_index=p.period_index, asset_ids=p.asset_ids,
                       returns=p.returns, weight_base=p.weight_base, chars=ranked,
                       char_names=p.char_names, load_report=p.load_report,
                       missing_mask=missing, neutral=neutral)


def winsorize_returns(p: Panel, lo_q: float = 0.01, hi_q: float = 0.99) -> Panel:
    """Clip returns per period at linearly interpolated empirical quantiles."""
    if not 0.0 <= lo_q < hi_q <= 1.0:
        raise ValueError("need 0 <= lo_q < hi_q <= 1")
    out = np.array(p.returns)
    bounds = p.period_bounds()
    for t in range(p.n_periods):
        lo, hi = bounds[t], bounds[t + 1]
        if hi > lo:
            r = out[lo:hi]
            qlo, qhi = np.quantile(r, [lo_q, hi_q], method="linear")
            out[lo:hi] = np.clip(r, qlo, qhi)
    return p._replace(returns=out)


def subsample(p: Panel, mask: PeriodMask) -> Panel:
    """Keep only the periods flagged in ``mask``."""
    inc = np.asarray(mask.included, dtype=bool)
    if inc.shape != (p.n_periods,):
        raise PanelError(f"mask covers {inc.size} periods, panel has {p.n_periods}")
    if not inc.any():
        raise PanelError("subsample mask selects no periods")
    return p.take_periods(np.flatnonzero(inc))


def period_range_mask(p: Panel, start: int | None = None, end: int | None = None) -> PeriodMask:
    """Mask of periods with ``start <= period <= end`` (either bound optional)."""
    inc = np.ones(p.n_periods, dtype=bool)
    if start is not None:
        inc &= p.periods >= start
    if end is not None:
        inc &= p.periods <= end
    return PeriodMask(inc)


def market_returns(p: Panel) -> np.ndarray:
    """Value-weighted return of all records in each period."""
    pidx = np.asarray(p.period_index)
    w = np.asarray(p.weight_base)
    W = np.bincount(pidx, weights=w, minlength=p.n_periods)
    WR = np.bincount(pidx, weights=w * np.asarray(p.returns), minlength=p.n_periods)
    return np.divide(WR, W, out=np.zeros_like(WR), where=W > 0)
