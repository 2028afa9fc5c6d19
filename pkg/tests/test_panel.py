import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import rank_map
from ptree.panel import (Panel, PanelError, PeriodMask, load_panel, make_panel, market_returns,
                         rank_cross_section, rank_normalize, subsample, winsorize_returns,
                         write_panel)


def _write(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_three_row_file(tmp_path):
    path = _write(tmp_path, "period,asset_id,ret,weight_base,size\n"
                            "202001,A,0.01,2.0,0.5\n202001,B,-0.02,1.0,0.1\n")
    p = load_panel(path)
    assert (p.n_periods, p.n_chars, p.n_records) == (1, 1, 2)
    assert p.char_names == ("size",)
    assert p.load_report.rows_dropped == 0


def test_load_duplicate_names_pair(tmp_path):
    path = _write(tmp_path, "period,asset_id,ret,weight_base,x\n"
                            "202001,A,0.01,1,0\n202001,A,0.02,1,0\n")
    with pytest.raises(PanelError, match=r"period=202001, asset=A"):
        load_panel(path)


def test_load_drops_missing_return(tmp_path):
    path = _write(tmp_path, "period,asset_id,ret,weight_base,x\n"
                            "202001,A,,1,0\n202001,B,0.02,1,0\n202001,C,0.03,1,0\n")
    p = load_panel(path)
    assert p.n_records == 2
    assert p.load_report.rows_dropped == 1
    assert p.load_report.reasons == {"missing_return": 1}


def test_load_drops_zero_weight_and_counts_reason(tmp_path):
    path = _write(tmp_path, "period,asset_id,ret,weight_base,x\n"
                            "202001,A,0.01,0,0\n202001,B,0.02,,0\n202001,C,0.03,1,0\n")
    p = load_panel(path)
    assert p.n_records == 1
    assert p.load_report.reasons == {"zero_weight_base": 1, "missing_weight_base": 1}


def test_load_malformed_row_reports_line(tmp_path):
    path = _write(tmp_path, "period,asset_id,ret,weight_base,x\n202001,A,abc,1,0\n")
    with pytest.raises(PanelError, match="line 2"):
        load_panel(path)


def test_load_missing_path_names_it(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_panel(tmp_path / "nope.csv")


def test_load_zero_usable_periods(tmp_path):
    path = _write(tmp_path, "period,asset_id,ret,weight_base,x\n202001,A,,1,0\n")
    with pytest.raises(PanelError, match="zero usable"):
        load_panel(path)


def test_load_missing_char_is_nan_and_custom_schema(tmp_path):
    path = _write(tmp_path, "month,id,r,me,x,y\n202002,B,0.1,1,,3\n202001,A,0.2,1,1,2\n")
    p = load_panel(path, {"period": "month", "asset_id": "id", "ret": "r", "weight_base": "me",
                          "chars": ["y", "x"]})
    assert list(p.periods) == [202001, 202002]
    assert p.char_names == ("y", "x")
    assert np.isnan(p.chars[1, 1]) and p.chars[0, 0] == 2.0


def test_write_then_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    p = make_panel([1, 2], ["a", "b", "a"], [0.1, 0.2, 0.3], [1.0, 2.0, 3.0],
                   np.array([[0.5, np.nan], [rng.random(), 1.0], [0.0, -1.0]]), ["x", "y"],
                   period_of=[1, 1, 2])
    write_panel(p, tmp_path / "out.csv")
    q = load_panel(tmp_path / "out.csv")
    np.testing.assert_array_equal(q.returns, p.returns)
    np.testing.assert_array_equal(q.chars, p.chars)
    assert list(q.asset_ids) == list(p.asset_ids)


def test_panel_invariants_enforced():
    with pytest.raises(PanelError):
        make_panel([1], ["a", "a"], [0.1, 0.2], [1, 1], np.zeros((2, 1)), ["x"], period_of=[1, 1])
    with pytest.raises(PanelError):
        make_panel([1], ["a"], [0.1], [-1.0], np.zeros((1, 1)), ["x"], period_of=[1])


def test_rank_three_values():
    np.testing.assert_allclose(rank_cross_section(np.array([5.0, 1.0, 3.0])), [1, -1, 0])


def test_rank_tie():
    np.testing.assert_allclose(rank_cross_section(np.array([2.0, 2.0])), [0, 0])


def test_rank_with_missing_and_neutral():
    # n = 3 non-missing values, ranks 2, 1, 3 -> 2(r-1)/2 - 1.
    p = make_panel([1], list("abcd"), [0.0] * 4, [1.0] * 4,
                   np.array([[7.0], [np.nan], [4.0], [9.0]]), ["x"], period_of=[1] * 4)
    rp = rank_normalize(p)
    np.testing.assert_allclose(rp.chars[:, 0], [0.0, 0.0, -1.0, 1.0])
    assert list(rp.missing_mask[:, 0]) == [False, True, False, False]
    assert rank_normalize(p, neutral=0.5).chars[1, 0] == 0.5


def test_rank_single_value_maps_to_zero():
    assert rank_cross_section(np.array([[3.0], [np.nan]]))[0, 0] == 0.0


def test_winsorize_identity_bounds():
    p = make_panel([1], list("abc"), [-0.5, 0.0, 0.5], [1.0] * 3, np.zeros((3, 1)), ["x"],
                   period_of=[1] * 3)
    np.testing.assert_array_equal(winsorize_returns(p, 0.0, 1.0).returns, p.returns)


def test_winsorize_interpolated_quantiles():
    # Linear rule: position q (n - 1) = 1 and 3 -> order statistics 0.01 and 0.03.
    p = make_panel([1], list("abcde"), [-0.9, 0.01, 0.02, 0.03, 0.9], [1.0] * 5,
                   np.zeros((5, 1)), ["x"], period_of=[1] * 5)
    np.testing.assert_allclose(winsorize_returns(p, 0.25, 0.75).returns,
                               [0.01, 0.01, 0.02, 0.03, 0.03])


def test_winsorize_all_equal():
    p = make_panel([1], list("abc"), [0.02] * 3, [1.0] * 3, np.zeros((3, 1)), ["x"],
                   period_of=[1] * 3)
    np.testing.assert_array_equal(winsorize_returns(p, 0.1, 0.9).returns, p.returns)


def _four_periods():
    return make_panel([1, 2, 3, 4], [f"a{i % 2}" for i in range(8)], np.arange(8) / 100,
                      np.ones(8), np.arange(8.0)[:, None], ["x"],
                      period_of=[1, 1, 2, 2, 3, 3, 4, 4])


def test_subsample_identity_alternating_and_empty():
    p = _four_periods()
    same = subsample(p, PeriodMask(np.ones(4, bool)))
    np.testing.assert_array_equal(same.returns, p.returns)
    alt = subsample(p, PeriodMask(np.array([True, False, True, False])))
    assert alt.n_periods == 2 and list(alt.periods) == [1, 3]
    with pytest.raises(PanelError):
        subsample(p, PeriodMask(np.zeros(4, bool)))


def test_market_returns_is_value_weighted():
    p = make_panel([1], ["a", "b"], [0.04, 0.0], [3.0, 1.0], np.zeros((2, 1)), ["x"],
                   period_of=[1, 1])
    np.testing.assert_allclose(market_returns(p), [0.03])


# -- properties ---------------------------------------------------------------

cross_sections = st.lists(
    st.one_of(st.floats(-1e6, 1e6, allow_nan=False), st.just(float("nan")), st.integers(-3, 3).map(float)),
    min_size=1, max_size=25)


@given(cross_sections)
def test_rank_matches_oracle(values):
    got = rank_cross_section(np.array(values))
    want = np.array(rank_map(values))
    np.testing.assert_allclose(got, want, atol=1e-12, equal_nan=True)


@given(cross_sections)
def test_rank_bounds_and_idempotence(values):
    once = rank_cross_section(np.array(values))
    finite = once[~np.isnan(once)]
    assert np.all((finite >= -1) & (finite <= 1))
    vals = [v for v in values if v == v]
    if len(vals) >= 2 and vals.count(min(vals)) == 1 and vals.count(max(vals)) == 1:
        # Average ranks lift a tied extreme off the boundary, so only unique extremes hit it.
        assert finite.min() == -1.0 and finite.max() == 1.0
    np.testing.assert_allclose(rank_cross_section(once), once, atol=1e-12, equal_nan=True)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=30), st.floats(0, 0.49), st.floats(0.51, 1))
def test_winsorize_bounds_and_count(rets, lo, hi):
    n = len(rets)
    p = make_panel([1], [f"a{i}" for i in range(n)], rets, [1.0] * n, np.zeros((n, 1)), ["x"],
                   period_of=[1] * n)
    out = winsorize_returns(p, lo, hi).returns
    qlo, qhi = np.quantile(rets, [lo, hi])
    assert out.shape == (n,)
    assert np.all(out >= qlo - 1e-15) and np.all(out <= qhi + 1e-15)
    inside = (np.array(rets) >= qlo) & (np.array(rets) <= qhi)
    np.testing.assert_array_equal(out[inside], np.array(rets)[inside])


@given(st.lists(st.booleans(), min_size=4, max_size=4), st.lists(st.booleans(), min_size=4, max_size=4))
def test_subsample_composes(m1, m2):
    p = _four_periods()
    m1, m2 = np.array(m1), np.array(m2)
    both = m1 & m2
    if not both.any():
        return
    once = subsample(p, PeriodMask(m1) & PeriodMask(m2))
    twice = subsample(subsample(p, PeriodMask(m1)), PeriodMask(m2[m1]))
    np.testing.assert_array_equal(once.returns, twice.returns)
    np.testing.assert_array_equal(once.periods, twice.periods)
    assert isinstance(once, Panel)
