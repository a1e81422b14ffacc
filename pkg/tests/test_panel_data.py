import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uirpkit.exceptions import InvariantViolation, ParseError, SchemaError
from uirpkit.panel_data import (
    DailyStockPanel,
    FundGenerator,
    FundPanel,
    load_factor_csv,
    load_fund_csv,
    load_stock_csv,
    synth_daily_panel,
    synth_factor_panel,
    synth_fund_panel,
    synth_gs_panel,
    write_panel_csv,
)
from uirpkit.perf_eval import fund_frame
from uirpkit.ree_core import EconomyParams

STOCKS = "stock_id,date,ret,cap,sic\nA,2001-01-02,0.01,100.0,3411\nA,2001-01-03,-0.02,101.0,3411\nB,2001-01-02,0.0,50.0,3412\n"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8", newline="")
    return path


def test_well_formed_stock_file(tmp_path):
    panel = load_stock_csv(write(tmp_path, "s.csv", STOCKS))
    assert len(panel) == 3
    assert panel.stock_ids == ["A", "B"]
    assert panel.frame["sic"].tolist() == ["3411", "3411", "3412"]


def test_duplicate_key_names_line(tmp_path):
    text = STOCKS + "A,2001-01-03,0.05,99.0,3411\n"
    with pytest.raises(InvariantViolation, match="line 5"):
        load_stock_csv(write(tmp_path, "s.csv", text))


def test_return_below_minus_one(tmp_path):
    text = STOCKS.replace("-0.02", "-1.5")
    with pytest.raises(InvariantViolation, match="line 3"):
        load_stock_csv(write(tmp_path, "s.csv", text))


@pytest.mark.parametrize("bad, line", [
    ("A,2001-13-02,0.01,100.0,3411", 2),
    ("A,2001-01-02,abc,100.0,3411", 2),
    ("A,2001-01-02,,100.0,3411", 2),
    ("A,2001-01-02,nan,100.0,3411", 2),
])
def test_parse_errors_carry_line_numbers(tmp_path, bad, line):
    text = "stock_id,date,ret,cap,sic\n" + bad + "\n"
    with pytest.raises(ParseError) as info:
        load_stock_csv(write(tmp_path, "s.csv", text))
    assert info.value.line == line


def test_bad_sic_and_cap(tmp_path):
    with pytest.raises(InvariantViolation):
        load_stock_csv(write(tmp_path, "s.csv", STOCKS.replace("3412", "341")))
    with pytest.raises(InvariantViolation):
        load_stock_csv(write(tmp_path, "s.csv", STOCKS.replace("50.0", "-50.0")))


def test_wrong_header(tmp_path):
    with pytest.raises(SchemaError):
        load_stock_csv(write(tmp_path, "s.csv", STOCKS.replace("cap,sic", "mcap,sic")))
    with pytest.raises(SchemaError):
        load_fund_csv(write(tmp_path, "f.csv", STOCKS))


def test_fund_file_with_missing_fields(tmp_path):
    text = ("fund_id,month,net_ret,tna,expense,turnover,style,index_flag\n"
            "F1,2001-01,0.01,100.0,,0.5,EDYG,\n"
            "F1,2001-02,0.02,110.0,0.012,,EDYG,D\n")
    funds = load_fund_csv(write(tmp_path, "f.csv", text))
    assert np.isnan(funds.frame["expense"].iloc[0]) and np.isnan(funds.frame["turnover"].iloc[1])
    assert funds.frame["index_flag"].tolist() == ["", "D"]
    with pytest.raises(InvariantViolation, match="line 3"):
        load_fund_csv(write(tmp_path, "f.csv", text.replace("F1,2001-02", "F1,2001-01")))


def test_factor_months_must_be_contiguous(tmp_path):
    text = "month,mkt_excess,smb,hml,umd,rf\n2001-01,0.01,0,0,0,0.001\n2001-03,0.01,0,0,0,0.001\n"
    with pytest.raises(InvariantViolation, match="contiguous"):
        load_factor_csv(write(tmp_path, "x.csv", text))


def test_round_trip_generated_panels(tmp_path):
    stocks, _ = synth_daily_panel(4, 5, 320)
    factors = synth_factor_panel(4, 30)
    funds, _ = synth_fund_panel(4, 6, 30, factors)
    for panel, loader, name in [(stocks, load_stock_csv, "s.csv"), (funds, load_fund_csv, "f.csv"),
                                (factors, load_factor_csv, "x.csv")]:
        path = tmp_path / name
        write_panel_csv(panel, path)
        first = path.read_bytes()
        write_panel_csv(loader(path), path)
        assert path.read_bytes() == first
        assert b"\r" not in first


@given(st.lists(st.tuples(st.sampled_from(["A", "B", "C"]), st.integers(0, 40),
                          st.floats(-0.99, 5.0, allow_nan=False), st.floats(0, 1e12, allow_nan=False),
                          st.sampled_from(["3411", "0100", "9999"])),
                min_size=1, max_size=30, unique_by=lambda r: (r[0], r[1])))
def test_stock_round_trip_property(tmp_path_factory, rows):
    frame = pd.DataFrame(rows, columns=["stock_id", "day", "ret", "cap", "sic"])
    frame["date"] = pd.Timestamp("2001-01-01") + pd.to_timedelta(frame.pop("day"), unit="D")
    panel = DailyStockPanel.from_frame(frame)
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    text = panel.to_csv_text()
    path.write_text(text, encoding="utf-8", newline="")
    again = load_stock_csv(path)
    assert again.to_csv_text() == text
    pd.testing.assert_frame_equal(again.frame, panel.frame)


def test_daily_generator_is_seeded():
    a, psi_a = synth_daily_panel(9, 12, 300)
    b, psi_b = synth_daily_panel(9, 12, 300)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    pd.testing.assert_series_equal(psi_a, psi_b)
    c, _ = synth_daily_panel(10, 12, 300)
    assert not a.frame["ret"].equals(c.frame["ret"])


def test_daily_generator_shape_and_ranges():
    panel, psi = synth_daily_panel(1, 24, 300, psi_range=(0.2, 0.4))
    assert len(panel) == 24 * 300
    assert psi.between(0.2, 0.4).all()
    assert (panel.frame["ret"] > -1).all()
    caps = panel.frame.groupby("stock_id")["cap"].nunique()
    assert (caps == 1).all()
    sics = panel.frame.groupby("stock_id")["sic"].first()
    assert sics.iloc[0] == sics.iloc[12] and sics.nunique() == 12
    with pytest.raises(ValueError):
        synth_daily_panel(1, 1, 300)
    with pytest.raises(ValueError):
        synth_daily_panel(1, 5, 299)


def test_zero_psi_is_a_pure_walk():
    panel, _ = synth_daily_panel(3, 4, 2000, psi_range=(0.0, 0.0))
    r = np.log1p(panel.frame.pivot(index="date", columns="stock_id", values="ret").to_numpy())
    lag1 = np.mean([np.corrcoef(r[1:, j], r[:-1, j])[0, 1] for j in range(r.shape[1])])
    assert abs(lag1) < 0.05


def test_gs_panel_properties():
    p = EconomyParams.two_asset(5.0)
    g = synth_gs_panel(p, 1, 10_000)
    scale = np.abs(g.market_payoff).max()
    np.testing.assert_allclose(g.market_payoff, 0.4 * g.informed_payoff + 0.6 * g.uninformed_payoff,
                               atol=1e-10 * scale)
    assert g.informed_payoff.mean() >= g.uninformed_payoff.mean()
    assert g.returns.shape == (10_000, 2) and len(g) == 10_000
    again = synth_gs_panel(p, 1, 10_000)
    np.testing.assert_array_equal(g.fund_payoff, again.fund_payoff)
    quiet = synth_gs_panel(p, 1, 10_000, tracking_noise=0.0)
    np.testing.assert_allclose(quiet.fund_payoff, g.uninformed_payoff, rtol=1e-12)
    np.testing.assert_array_equal(quiet.uninformed_payoff, g.uninformed_payoff)
    with pytest.raises(ValueError):
        synth_gs_panel(p, 1, 99)


def test_fund_generator_exact_and_seeded():
    factors = synth_factor_panel(2, 48)
    gen = FundGenerator(noise_sd=0.0, stagger_share=0.0)
    funds, truth = synth_fund_panel(2, 3, 48, factors, gen, alphas=[0.012] * 3, betas=[[0.9, 0.0, 0.0, 0.0]] * 3)
    fac = factors.indexed
    for fid, g in funds.frame.groupby("fund_id"):
        f = fac.loc[pd.PeriodIndex(g["month"])]
        np.testing.assert_allclose(g["net_ret"].to_numpy(), f["rf"] + 0.001 + 0.9 * f["mkt_excess"], atol=1e-15)
    assert truth["alpha_annual"].tolist() == [0.012] * 3
    again, _ = synth_fund_panel(2, 3, 48, factors, gen, alphas=[0.012] * 3, betas=[[0.9, 0.0, 0.0, 0.0]] * 3)
    pd.testing.assert_frame_equal(funds.frame, again.frame)


def test_expense_carry_forward_fills_gaps():
    factors = synth_factor_panel(5, 60)
    funds, _ = synth_fund_panel(5, 10, 60, factors, FundGenerator(expense_missing=0.1))
    assert funds.frame["expense"].isna().mean() > 0.03
    f = fund_frame(funds)
    seen = f.groupby("fund_id")["expense"].transform(lambda s: s.notna().cummax())
    assert f.loc[seen, "expense_filled"].notna().all()


def test_factor_panel_from_market_returns():
    months = pd.period_range("2003-01", periods=10, freq="M")
    market = pd.Series(np.linspace(-0.02, 0.03, 10), index=months)
    factors = synth_factor_panel(1, months, market_returns=market)
    fr = factors.indexed
    np.testing.assert_allclose(fr["mkt_excess"] + fr["rf"], market.to_numpy(), atol=1e-15)
    assert (fr["rf"] >= 0).all()
    with pytest.raises(ValueError):
        synth_factor_panel(1, months, market_returns=market.iloc[:5])


def test_fund_panel_requires_net_return():
    frame = pd.DataFrame({"fund_id": ["F"], "month": ["2001-01"], "net_ret": [np.nan], "tna": [1.0]})
    with pytest.raises(InvariantViolation):
        FundPanel.from_frame(frame)
