import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from uirpkit.exceptions import InsufficientData
from uirpkit.panel_data import DailyStockPanel, make_rng, synth_daily_panel
from uirpkit.proxy_er import (
    ProxyERTransformer,
    RSquaredPanel,
    build_industry_prices,
    build_normalized_prices,
    estimate_proxy_er,
    load_r2_csv,
    permutation_null,
)
from uirpkit.regression import ols_fit

MONTH = "2001-01"


def tiny_panel(records):
    """records: {stock_id: (sic, [returns], cap, first_day_offset)} over consecutive business days."""
    rows = []
    days = pd.bdate_range("2001-01-02", periods=40)
    for sid, (sic, rets, cap, offset) in records.items():
        for k, r in enumerate(rets):
            rows.append((sid, days[offset + k], r, cap, sic))
    return DailyStockPanel.from_frame(pd.DataFrame(rows, columns=["stock_id", "date", "ret", "cap", "sic"]))


@pytest.fixture(scope="module")
def synth():
    panel, _ = synth_daily_panel(21, 24, 300)
    return panel


def test_single_stock_normalizes_to_one():
    prices = build_normalized_prices(tiny_panel({"A": ("3411", [0.02, 0.10, -0.05], 10.0, 0)}))
    np.testing.assert_allclose(prices.normalized["A"], 1.0, atol=1e-15)
    np.testing.assert_allclose(prices.raw["A"], [1.0, 1.10, 1.045])


def test_compounding_against_flat_market():
    # equal caps, opposite returns: the market is flat
    panel = tiny_panel({"A": ("3411", [0.0, 0.10, 0.10], 5.0, 0), "B": ("3412", [0.0, -0.10, -0.10], 5.0, 0)})
    prices = build_normalized_prices(panel)
    np.testing.assert_allclose(prices.market_index, 1.0, atol=1e-15)
    np.testing.assert_allclose(prices.normalized["A"], [1.0, 1.10, 1.21], rtol=1e-14)
    assert prices.anchor_date == pd.Timestamp("2001-01-02")


def test_late_entrant_starts_at_inverse_market():
    panel = tiny_panel({"A": ("3411", [0.0, 0.05, 0.05, 0.01], 5.0, 0), "B": ("3412", [0.3, 0.02], 5.0, 2)})
    prices = build_normalized_prices(panel)
    b = prices.normalized["B"]
    assert b.iloc[:2].isna().all()
    assert b.iloc[2] == pytest.approx(1.0 / prices.market_index.iloc[2])
    assert prices.market_index.iloc[2] == pytest.approx(1.05 ** 2)


def test_sic4_portfolio_excludes_own_stock():
    panel = tiny_panel({"A": ("3411", [0.0, 0.01, 0.02, -0.01], 3.0, 0),
                        "B": ("3411", [0.0, 0.03, -0.02, 0.04], 7.0, 0)})
    levels = build_industry_prices(panel, "A")
    prices = build_normalized_prices(panel)
    np.testing.assert_allclose(levels[4], prices.normalized["B"], rtol=1e-14)
    assert levels[3] is None and levels[2] is None and levels[1] is None


def test_hierarchy_exclusion_sets():
    panel = tiny_panel({"X": ("3411", [0.0, 0.01, 0.02, -0.01], 3.0, 0),
                        "Y": ("3412", [0.0, 0.03, -0.02, 0.04], 7.0, 0),
                        "Z": ("3499", [0.0, -0.01, 0.05, 0.02], 2.0, 0)})
    levels = build_industry_prices(panel, "X")
    prices = build_normalized_prices(panel)
    assert levels[4] is None
    np.testing.assert_allclose(levels[3], prices.normalized["Y"], rtol=1e-14)
    np.testing.assert_allclose(levels[2], prices.normalized["Z"], rtol=1e-14)
    assert levels[1] is None
    with pytest.raises(KeyError):
        build_industry_prices(panel, "nope")


def test_industry_level_is_cap_weighted_with_previous_caps():
    rows = [("A", d, r, c, "2011") for d, r, c in
            [("2001-01-02", 0.0, 1.0), ("2001-01-03", 0.10, 3.0), ("2001-01-04", 0.10, 3.0)]]
    rows += [("B", d, r, 1.0, "2011") for d, r in [("2001-01-02", 0.0), ("2001-01-03", 0.0), ("2001-01-04", 0.0)]]
    rows += [("C", d, 0.0, 1.0, "2015") for d in ("2001-01-02", "2001-01-03", "2001-01-04")]
    panel = DailyStockPanel.from_frame(pd.DataFrame(rows, columns=["stock_id", "date", "ret", "cap", "sic"]))
    # SIC3 level for C holds A and B; day-2 weights use day-1 caps (1, 1), day-3 uses (3, 1)
    lvl = build_industry_prices(panel, "C")[3] * build_normalized_prices(panel).market_index
    np.testing.assert_allclose(lvl, [1.0, 1.05, 1.05 * 1.075], rtol=1e-14)


def window_records(panel, sid, month=MONTH):
    f = panel.frame[panel.frame["stock_id"] == sid]
    m = pd.Period(month, freq="M")
    per = f["date"].dt.to_period("M")
    inside = (per >= m - 12) & (per <= m - 1)
    inside.iloc[0] = False  # the first record has no lagged price
    return f.index[inside]


@pytest.mark.parametrize("keep, has_row", [(59, False), (60, True)])
def test_observation_threshold(synth, keep, has_row):
    f = synth.frame.copy()
    idx = window_records(synth, "S0003")
    f.loc[idx[:-keep], "ret"] = 0.0
    res = estimate_proxy_er(DailyStockPanel.from_frame(f), month=MONTH)
    assert ("S0003" in set(res.frame["stock_id"])) == has_row
    diag = res.diagnostics.set_index("stock_id").loc["S0003"]
    assert diag["n_obs"] == keep
    assert diag["status"] == ("ok" if has_row else "too_few")


def test_manual_regression_with_gaps(synth):
    rng = make_rng(3, 0)
    f = synth.frame
    own = f.index[f["stock_id"] == "S0005"]
    gappy = f.drop(rng.choice(own[1:], 40, replace=False))
    panel = DailyStockPanel.from_frame(gappy)
    result = estimate_proxy_er(panel, month=MONTH).frame.set_index("stock_id").loc["S0005"]

    prices = build_normalized_prices(panel)
    levels = build_industry_prices(panel, "S0005")
    rec = panel.frame[panel.frame["stock_id"] == "S0005"]
    prev = rec["date"].to_numpy()[:-1]
    cur = rec.iloc[1:]
    X = np.column_stack([prices.normalized["S0005"].loc[prev].to_numpy()] +
                        [levels[d].loc[prev].to_numpy() for d in (4, 3, 2, 1) if levels[d] is not None])
    y = cur["ret"].to_numpy()
    per = cur["date"].dt.to_period("M").to_numpy()
    m = pd.Period(MONTH, freq="M")
    keep = (per >= m - 12) & (per <= m - 1) & (y != 0)
    fit = ols_fit(X[keep], y[keep])
    assert result["n_obs"] == keep.sum()
    assert result["r2"] == pytest.approx(fit.r_squared, abs=1e-12)
    # dropping any regressor cannot raise R^2 on the same observations
    for j in range(X.shape[1]):
        assert ols_fit(np.delete(X[keep], j, axis=1), y[keep]).r_squared <= fit.r_squared + 1e-12


def test_unique_code_omits_sic4(synth):
    f = synth.frame.copy()
    f.loc[f["stock_id"] == "S0000", "sic"] = "3400"
    res = estimate_proxy_er(DailyStockPanel.from_frame(f), month=MONTH)
    diag = res.diagnostics.set_index("stock_id").loc["S0000"]
    assert diag["status"] == "ok" and "sic4" in diag["omitted"].split("+")
    assert "S0000" in set(res.frame["stock_id"])


def test_record_order_does_not_matter(synth):
    shuffled = synth.frame.sample(frac=1.0, random_state=0)
    a = estimate_proxy_er(synth, month=MONTH)
    b = estimate_proxy_er(DailyStockPanel.from_frame(shuffled), month=MONTH)
    pd.testing.assert_frame_equal(a.frame, b.frame, check_exact=True)


def test_worker_count_does_not_matter(synth):
    a = estimate_proxy_er(synth, workers=1)
    b = estimate_proxy_er(synth, workers=4)
    pd.testing.assert_frame_equal(a.frame, b.frame, check_exact=True)
    assert set(a.frame["month"].astype(str)) == {"2001-01", "2001-02"}


def test_month_outside_panel(synth):
    with pytest.raises(InsufficientData):
        estimate_proxy_er(synth, month="2000-06")


def test_current_month_never_used(synth):
    f = synth.frame.copy()
    jan = f["date"].dt.to_period("M") == pd.Period(MONTH, freq="M")
    f.loc[jan, "ret"] = f.loc[jan, "ret"] * 3
    a = estimate_proxy_er(synth, month=MONTH).frame
    b = estimate_proxy_er(DailyStockPanel.from_frame(f), month=MONTH).frame
    pd.testing.assert_frame_equal(a, b, check_exact=True)


@settings(max_examples=8)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_r2_in_unit_interval(seed, psi_hi):
    panel, _ = synth_daily_panel(seed, 6, 300, psi_range=(0.0, psi_hi))
    r2 = estimate_proxy_er(panel, month=MONTH).frame["r2"]
    assert len(r2) == 6 and r2.between(0.0, 1.0).all()


@pytest.mark.slow
def test_mean_reversion_beats_permutation_null():
    panel, _ = synth_daily_panel(8, 30, 300, psi_range=(0.9, 0.9))
    observed = estimate_proxy_er(panel, month=MONTH).frame["r2"].mean()
    null = permutation_null(panel, MONTH, n_perm=199, seed=1)
    p_value = (1 + np.sum(null >= observed)) / (1 + len(null))
    assert p_value < 0.01


def test_r2_csv_round_trip(synth, tmp_path):
    res = estimate_proxy_er(synth, month=MONTH)
    path = tmp_path / "proxy_er.csv"
    path.write_text(res.to_csv_text(), encoding="utf-8", newline="")
    assert path.read_text().splitlines()[0] == "stock_id,month,r2,n_obs"
    again = load_r2_csv(path)
    pd.testing.assert_frame_equal(again.frame, res.frame)
    assert again.for_month(MONTH).index.tolist() == res.frame["stock_id"].tolist()


def test_r2_panel_validation():
    with pytest.raises(ValueError):
        RSquaredPanel.from_frame({"stock_id": ["A"], "month": ["2001-01"], "r2": [1.5], "n_obs": [70]})


def test_transformer_api(synth):
    est = ProxyERTransformer(months=[MONTH])
    assert est.get_params()["min_obs"] == 60
    out = est.fit(synth).transform()
    pd.testing.assert_frame_equal(out.frame, estimate_proxy_er(synth, month=MONTH).frame)
    pd.testing.assert_frame_equal(est.fit_transform(synth).frame, out.frame)
    assert est.stock_ids_ == synth.stock_ids
    assert not hasattr(clone(est), "prepared_")
    with pytest.raises(ValueError):
        ProxyERTransformer(min_obs=1).fit(synth)
