"""Monthly uninformed-investor reference portfolio (UIRP) returns.

Stocks with an R^2 for the month (bucket A) are weighted by
``(1 - R^2_i) K_i``; the rest (bucket B) are cap-weighted; the two bucket
returns are then combined with weights equal to each bucket's total cap.
``K_i`` is the cap at the stock's last record of the previous month.  A
stock with no record in the previous month enters at its first record of
the month: that record's cap is its weight and only later returns compound.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ._io import frame_to_csv_text
from .exceptions import EmptyMonth, SchemaError
from .panel_data import DailyStockPanel, _parse_dates, _parse_float, _read_raw

UIRP_COLUMNS = ("month", "uirp_ret", "covered_cap_share", "deviation", "market_ret")


def monthly_stock_returns(panel):
    """Per (stock, month) compounded return and ex-ante weight cap ``K``.

    Returns a frame with columns ``stock_id, month, ret, cap``; stocks
    without any return after their entry record in a month are dropped.
    """
    if not isinstance(panel, DailyStockPanel):
        raise TypeError("expected a DailyStockPanel")
    f = panel.frame
    month = f["date"].dt.to_period("M")
    g = f.assign(month=month, gross=1.0 + f["ret"]).groupby(["stock_id", "month"], sort=True)
    agg = g.agg(gross=("gross", "prod"), first_gross=("gross", "first"), first_cap=("cap", "first"),
                last_cap=("cap", "last"), n=("ret", "size")).reset_index()
    prev = agg[["stock_id", "month", "last_cap"]].copy()
    prev["month"] = prev["month"] + 1
    agg = agg.merge(prev.rename(columns={"last_cap": "prev_cap"}), on=["stock_id", "month"], how="left")
    carried = agg["prev_cap"].notna()
    # entrants: weight on the entry day's cap, compound the days after it
    ret = np.where(carried, agg["gross"] - 1.0, agg["gross"] / agg["first_gross"] - 1.0)
    cap = np.where(carried, agg["prev_cap"], agg["first_cap"])
    keep = carried | (agg["n"] > 1)
    out = pd.DataFrame({"stock_id": agg["stock_id"], "month": agg["month"], "ret": ret, "cap": cap})[keep.to_numpy()]
    return out.reset_index(drop=True)


def _uirp_row(month_frame, r2_map, month):
    if month_frame.empty:
        raise EmptyMonth(f"no stock returns in {month}")
    K = month_frame["cap"].to_numpy()
    r = month_frame["ret"].to_numpy()
    r2 = month_frame["stock_id"].map(r2_map).to_numpy(dtype=float)
    in_a = ~np.isnan(r2)
    k_a, k_b = K[in_a].sum(), K[~in_a].sum()
    total = k_a + k_b
    if total <= 0:
        raise EmptyMonth(f"total capitalization is zero in {month}")
    market = float(K @ r / total)
    if k_b > 0:
        ret_b = float(K[~in_a] @ r[~in_a] / k_b)
    if in_a.any() and k_a > 0:
        w = (1.0 - r2[in_a]) * K[in_a]
        # every covered R^2 equal to one leaves only cap weights, the limit of the formula
        ret_a = float(w @ r[in_a] / w.sum()) if w.sum() > 0 else float(K[in_a] @ r[in_a] / k_a)
        deviation = float(r2[in_a] @ K[in_a] / k_a)
        uirp = ret_a if k_b == 0 else (k_a * ret_a + k_b * ret_b) / total
    else:
        deviation = np.nan
        uirp = ret_b
    return {"month": month, "uirp_ret": uirp, "covered_cap_share": k_a / total,
            "deviation": deviation, "market_ret": market}


@dataclass(frozen=True, eq=False)
class UirpSeries:
    """Monthly UIRP return, covered cap share, deviation and the cap-weighted market return."""

    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame):
        frame = pd.DataFrame(frame).copy()
        if "market_ret" not in frame.columns:
            frame["market_ret"] = np.nan
        missing = [c for c in UIRP_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"UIRP series is missing columns {missing}")
        frame = frame[list(UIRP_COLUMNS)]
        frame["month"] = pd.PeriodIndex(frame["month"], freq="M")
        for col in UIRP_COLUMNS[1:]:
            frame[col] = frame[col].astype(float)
        frame = frame.sort_values("month").reset_index(drop=True)
        return cls(frame)

    def __len__(self):
        return len(self.frame)

    @property
    def returns(self):
        return pd.Series(self.frame["uirp_ret"].to_numpy(), index=pd.PeriodIndex(self.frame["month"]), name="uirp")

    @property
    def market(self):
        return pd.Series(self.frame["market_ret"].to_numpy(), index=pd.PeriodIndex(self.frame["month"]),
                         name="market")

    def to_csv_text(self):
        return frame_to_csv_text(self.frame, {"month": lambda col: col.dt.strftime("%Y-%m")})


def load_uirp_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    cols = UIRP_COLUMNS if header.endswith("market_ret") else UIRP_COLUMNS[:-1]
    raw = _read_raw(path, cols)
    frame = pd.DataFrame({"month": _parse_dates(raw, "month", "%Y-%m", to_month=True)})
    for col in cols[1:]:
        frame[col] = _parse_float(raw, col, required=col != "deviation")
    return UirpSeries.from_frame(frame)


def _r2_lookup(r2, month):
    if r2 is None:
        return {}
    sub = r2.frame[r2.frame["month"] == month]
    return dict(zip(sub["stock_id"], sub["r2"]))


def build_uirp(panel, r2, month, monthly=None):
    """One month of the UIRP series as a dict.

    Parameters
    ----------
    panel : DailyStockPanel
    r2 : RSquaredPanel or None
    month : str or pandas.Period
    monthly : pandas.DataFrame, optional
        Precomputed :func:`monthly_stock_returns` output.
    """
    month = pd.Period(month, freq="M")
    monthly = monthly_stock_returns(panel) if monthly is None else monthly
    return _uirp_row(monthly[monthly["month"] == month], _r2_lookup(r2, month), month)


def build_uirp_series(panel, r2, months=None):
    """UIRP rows for ``months`` (default: every month with an R^2, else every panel month)."""
    monthly = monthly_stock_returns(panel)
    if months is None:
        if r2 is not None and len(r2):
            months = pd.PeriodIndex(r2.frame["month"].unique(), freq="M").sort_values()
        else:
            months = pd.PeriodIndex(monthly["month"].unique(), freq="M").sort_values()
    by_month = dict(tuple(monthly.groupby("month")))
    rows = []
    for m in pd.PeriodIndex(months, freq="M"):
        rows.append(_uirp_row(by_month.get(m, monthly.iloc[:0]), _r2_lookup(r2, m), m))
    return UirpSeries.from_frame(pd.DataFrame(rows, columns=list(UIRP_COLUMNS)))
