"""Rolling estimation of the per-stock return predictability measure ("Proxy E(r)").

For each stock and month ``m`` the daily return is regressed on the
previous trading day's normalized own price and up to four normalized
industry-portfolio prices built from the SIC hierarchy, using the twelve
months before ``m``.  The R^2 of that regression is the stock's Proxy E(r).

Conventions
-----------
* Raw prices start at 1 on a series' first date and compound every later
  return; normalized price = raw price / market index level.
* The market index compounds the cap-weighted return of every panel stock
  from 1 at the panel's first date; weights are previous-record caps.
* Industry levels, for stock i at SIC depth d (4, 3, 2, 1 digits), hold the
  stocks sharing the first d digits of i's code but not the first d + 1
  (at depth 4: every other stock with the same code).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._io import frame_to_csv_text
from .exceptions import EmptyPortfolio, InsufficientData, RankDeficient, SchemaError
from .panel_data import DailyStockPanel, make_rng
from .regression import ols_fit

log = logging.getLogger(__name__)

SIC_DEPTHS = (4, 3, 2, 1)
REGRESSOR_NAMES = ("own", "sic4", "sic3", "sic2", "sic1")
MIN_OBS = 60
WINDOW_MONTHS = 12
R2_COLUMNS = ("stock_id", "month", "r2", "n_obs")


def _level_from_returns(ret, present):
    """Compound ``ret`` from 1 at the first present date; NaN where not present."""
    idx = np.flatnonzero(present)
    if idx.size == 0:
        return None
    level = np.full(ret.shape, np.nan)
    growth = np.cumprod(1.0 + ret[idx[0]:])
    level[idx[0]:] = growth / growth[0]
    level[~present] = np.nan
    return level


@dataclass(frozen=True, eq=False)
class NormalizedPriceSeries:
    """Date-indexed price levels.

    Attributes
    ----------
    market_index : pandas.Series
        Cap-weighted market level, 1 at the panel's first date.
    raw : pandas.DataFrame
        Dates x stocks raw price levels (1 on each stock's first date).
    normalized : pandas.DataFrame
        ``raw`` divided by ``market_index``.
    """

    market_index: pd.Series
    raw: pd.DataFrame
    normalized: pd.DataFrame
    anchor_date: pd.Timestamp = None


class _PreparedPanel:
    """Long-format arrays and group aggregates shared by every estimation month."""

    def __init__(self, panel):
        if not isinstance(panel, DailyStockPanel):
            raise TypeError("expected a DailyStockPanel")
        if len(panel) == 0:
            raise InsufficientData("stock panel is empty")
        f = panel.frame
        self.panel = panel
        self.dates = pd.DatetimeIndex(np.sort(f["date"].unique()))
        self.stock_ids = np.array(sorted(f["stock_id"].unique()))
        self.n_dates = len(self.dates)
        self.sid = np.searchsorted(self.stock_ids, f["stock_id"].to_numpy())
        self.did = np.searchsorted(self.dates.values, f["date"].to_numpy())
        self.ret = f["ret"].to_numpy()
        cap = f["cap"].to_numpy()
        first = np.r_[True, self.sid[1:] != self.sid[:-1]]
        self.first = first
        prev_cap = np.r_[np.nan, cap[:-1]]
        prev_cap[first] = np.nan
        self.weight = np.nan_to_num(prev_cap, nan=0.0)
        self.contrib = self.weight * self.ret
        self.month_code = pd.PeriodIndex(f["date"], freq="M").asi8
        self.starts = np.flatnonzero(first)
        self.ends = np.r_[self.starts[1:], len(f)]
        sic = f["sic"].to_numpy().astype(str)
        self.stock_sic = sic[self.starts]

        # market index
        w = np.bincount(self.did, self.weight, self.n_dates)
        s = np.bincount(self.did, self.contrib, self.n_dates)
        mret = np.divide(s, w, out=np.zeros_like(s), where=w > 0)
        mret[0] = 0.0
        self.market = np.cumprod(1.0 + mret)

        # raw and normalized own prices per record
        growth = np.empty(len(f))
        for a, b in zip(self.starts, self.ends):
            g = np.cumprod(1.0 + self.ret[a:b])
            growth[a:b] = g / g[0]
        self.raw_price = growth
        self.norm_price = growth / self.market[self.did]

        # group aggregates per SIC prefix depth: arrays (n_dates, n_groups)
        self.group_codes = {}
        self.group_of_stock = {}
        self.agg = {}
        for depth in SIC_DEPTHS:
            prefixes = np.array([c[:depth] for c in sic])
            codes, gid = np.unique(prefixes, return_inverse=True)
            ng = len(codes)
            flat = self.did * ng + gid
            size = self.n_dates * ng
            self.group_codes[depth] = codes
            self.group_of_stock[depth] = gid[self.starts]
            self.agg[depth] = tuple(
                np.bincount(flat, v, size).reshape(self.n_dates, ng)
                for v in (self.contrib, self.weight, np.ones(len(f)))
            )
        self._levels = {}

    def _exclusion_sums(self, stock, depth):
        gid = self.group_of_stock[depth][stock]
        s, w, c = (a[:, gid].copy() for a in self.agg[depth])
        if depth == 4:
            a, b = self.starts[stock], self.ends[stock]
            d = self.did[a:b]
            s[d] -= self.contrib[a:b]
            w[d] -= self.weight[a:b]
            c[d] -= 1
        else:
            sub = self.group_of_stock[depth + 1][stock]
            s2, w2, c2 = (a[:, sub] for a in self.agg[depth + 1])
            s, w, c = s - s2, w - w2, c - c2
        return s, w, c

    def industry_level(self, stock, depth):
        """Normalized industry level (length n_dates) or raise EmptyPortfolio."""
        key = (stock, depth) if depth == 4 else (self.stock_sic[stock][:depth + 1], depth)
        if key not in self._levels:
            s, w, c = self._exclusion_sums(stock, depth)
            present = c > 0.5
            # floating cancellation can leave tiny residues once the own stock is removed
            ok = present & (w > 1e-12 * np.maximum(1.0, np.abs(w).max()))
            ret = np.zeros(self.n_dates)
            ret[ok] = s[ok] / w[ok]
            level = _level_from_returns(ret, present)
            self._levels[key] = None if level is None else level / self.market
        level = self._levels[key]
        if level is None:
            raise EmptyPortfolio(f"no stocks in the SIC{depth} portfolio of {self.stock_ids[stock]}")
        return level

    def design(self, stock):
        """Per-record response and lagged regressors for one stock.

        Returns ``(month_code, y, X, empty_depths)`` for records after the
        first; ``X`` has the five columns of :data:`REGRESSOR_NAMES` with NaN
        for empty or undefined industry levels.
        """
        a, b = self.starts[stock], self.ends[stock]
        prev_dates = self.did[a:b - 1]
        cols = [self.norm_price[a:b - 1]]
        empty = []
        for depth in SIC_DEPTHS:
            try:
                cols.append(self.industry_level(stock, depth)[prev_dates])
            except EmptyPortfolio:
                empty.append(depth)
                cols.append(np.full(b - a - 1, np.nan))
        return self.month_code[a + 1:b], self.ret[a + 1:b], np.column_stack(cols), tuple(empty)

    @property
    def month_range(self):
        return int(self.month_code.min()), int(self.month_code.max())


def build_normalized_prices(panel):
    prep = _PreparedPanel(panel)
    raw = pd.DataFrame(np.nan, index=prep.dates, columns=prep.stock_ids)
    raw.values[prep.did, prep.sid] = prep.raw_price
    market = pd.Series(prep.market, index=prep.dates, name="market_index")
    return NormalizedPriceSeries(market_index=market, raw=raw, normalized=raw.div(market, axis=0),
                                 anchor_date=prep.dates[0])


def build_industry_prices(panel, stock_id):
    """Normalized SIC4..SIC1 industry levels for one stock.

    Returns a dict ``{depth: pandas.Series or None}``; ``None`` marks an
    empty portfolio, which the estimator omits as a regressor.
    """
    prep = panel if isinstance(panel, _PreparedPanel) else _PreparedPanel(panel)
    hit = np.flatnonzero(prep.stock_ids == str(stock_id))
    if hit.size == 0:
        raise KeyError(f"stock {stock_id!r} is not in the panel")
    out = {}
    for depth in SIC_DEPTHS:
        try:
            out[depth] = pd.Series(prep.industry_level(hit[0], depth), index=prep.dates, name=f"sic{depth}")
        except EmptyPortfolio:
            out[depth] = None
    return out


@dataclass(frozen=True, eq=False)
class RSquaredPanel:
    """Per stock-month Proxy E(r) with the number of daily observations used.

    ``diagnostics`` lists every attempted (stock, month) with its status
    (``ok``, ``too_few``, ``rank_deficient``) and the omitted regressors.
    """

    frame: pd.DataFrame
    diagnostics: pd.DataFrame = field(default=None)

    @classmethod
    def from_frame(cls, frame, diagnostics=None):
        frame = pd.DataFrame(frame).copy()
        missing = [c for c in R2_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"R^2 panel is missing columns {missing}")
        frame = frame[list(R2_COLUMNS)]
        frame["stock_id"] = frame["stock_id"].astype(str)
        frame["month"] = pd.PeriodIndex(frame["month"], freq="M")
        frame["r2"] = frame["r2"].astype(float)
        frame["n_obs"] = frame["n_obs"].astype(int)
        if ((frame["r2"] < 0) | (frame["r2"] > 1)).any():
            raise ValueError("r2 must lie in [0, 1]")
        if frame.duplicated(["stock_id", "month"]).any():
            raise ValueError("duplicate (stock_id, month) rows")
        frame = frame.sort_values(["month", "stock_id"], kind="mergesort").reset_index(drop=True)
        return cls(frame, diagnostics)

    def __len__(self):
        return len(self.frame)

    def for_month(self, month):
        month = pd.Period(month, freq="M")
        sub = self.frame[self.frame["month"] == month]
        return pd.Series(sub["r2"].to_numpy(), index=sub["stock_id"].to_numpy(), name="r2")

    def to_csv_text(self):
        return frame_to_csv_text(self.frame, {"month": lambda col: col.dt.strftime("%Y-%m")})


def load_r2_csv(path):
    from .panel_data import _parse_dates, _parse_float, _parse_ids, _read_raw

    raw = _read_raw(path, R2_COLUMNS)
    frame = pd.DataFrame({
        "stock_id": _parse_ids(raw, "stock_id"),
        "month": _parse_dates(raw, "month", "%Y-%m", to_month=True),
        "r2": _parse_float(raw, "r2"),
        "n_obs": _parse_float(raw, "n_obs").astype(int),
    })
    return RSquaredPanel.from_frame(frame)


def _estimate_stock(month_code, y, X, empty, m, window, min_obs):
    lo, hi = np.searchsorted(month_code, [m - window, m])
    yw, Xw = y[lo:hi], X[lo:hi]
    keep = yw != 0.0
    yw, Xw = yw[keep], Xw[keep]
    n = len(yw)
    if n < min_obs:
        return "too_few", n, None, ()
    usable = ~np.isnan(Xw).any(axis=0)
    omitted = tuple(REGRESSOR_NAMES[j] for j in range(X.shape[1]) if not usable[j])
    try:
        fit = ols_fit(Xw[:, usable], yw)
    except RankDeficient:
        return "rank_deficient", n, None, omitted
    except InsufficientData:
        return "degenerate", n, None, omitted
    return "ok", n, fit.r_squared, omitted


class _Estimator:
    def __init__(self, prep, min_obs, window):
        self.prep, self.min_obs, self.window = prep, min_obs, window
        self.designs = [prep.design(i) for i in range(len(prep.stock_ids))]

    def month(self, m):
        rows, diag = [], []
        for i, (mc, y, X, empty) in enumerate(self.designs):
            status, n, r2, omitted = _estimate_stock(mc, y, X, empty, m, self.window, self.min_obs)
            sid = self.prep.stock_ids[i]
            if status == "ok":
                rows.append((sid, m, r2, n))
            elif status in ("rank_deficient", "degenerate"):
                log.info("skipping %s in month %s: %s", sid, pd.Period(ordinal=m, freq="M"), status)
            if n > 0 or status != "too_few":
                diag.append((sid, m, status, n, "+".join(omitted)))
        return rows, diag


def _month_codes(months):
    return [pd.Period(mm, freq="M").ordinal for mm in months]


def _assemble(results):
    rows = [r for res in results for r in res[0]]
    diag = [d for res in results for d in res[1]]
    frame = pd.DataFrame(rows, columns=["stock_id", "month", "r2", "n_obs"])
    frame["month"] = pd.PeriodIndex.from_ordinals(frame["month"].to_numpy(dtype=np.int64), freq="M") \
        if len(frame) else pd.PeriodIndex([], freq="M")
    dframe = pd.DataFrame(diag, columns=["stock_id", "month", "status", "n_obs", "omitted"])
    dframe["month"] = pd.PeriodIndex.from_ordinals(dframe["month"].to_numpy(dtype=np.int64), freq="M") \
        if len(dframe) else pd.PeriodIndex([], freq="M")
    dframe = dframe.sort_values(["month", "stock_id"], kind="mergesort").reset_index(drop=True)
    return RSquaredPanel.from_frame(frame, dframe)


def default_months(panel, window=WINDOW_MONTHS):
    months = panel.months
    return months[window:]


def estimate_proxy_er(panel, month=None, months=None, min_obs=MIN_OBS, window=WINDOW_MONTHS, workers=1):
    """Proxy E(r) for one month or a list of months.

    Parameters
    ----------
    panel : DailyStockPanel
    month : str or pandas.Period, optional
        Single estimation month; its own days are never used.
    months : sequence, optional
        Several months; defaults to every month with a full window inside the panel.
    min_obs : int
        Minimum nonzero-return days in the window.
    workers : int
        Threads across months; output does not depend on it.

    Returns
    -------
    RSquaredPanel
    """
    prep = panel if isinstance(panel, _PreparedPanel) else _PreparedPanel(panel)
    if month is not None:
        months = [month]
    elif months is None:
        months = default_months(prep.panel, window)
    codes = _month_codes(months)
    first, last = prep.month_range
    for m in codes:
        if m - window < first or m - 1 > last:
            raise InsufficientData(
                f"panel does not cover the {window} months before {pd.Period(ordinal=m, freq='M')}")
    est = _Estimator(prep, min_obs, window)
    if workers > 1 and len(codes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(est.month, codes))
    else:
        results = [est.month(m) for m in codes]
    return _assemble(results)


def permuted_panel(panel, rng):
    """Shuffle dates jointly across stocks; requires a balanced panel."""
    f = panel.frame
    dates = np.sort(f["date"].unique())
    counts = f.groupby("stock_id")["date"].count()
    if (counts != len(dates)).any():
        raise ValueError("date permutation needs every stock on every date")
    perm = rng.permutation(len(dates))
    n_stocks = len(counts)
    ret = f["ret"].to_numpy().reshape(n_stocks, len(dates))[:, perm].ravel()
    out = f.copy()
    out["ret"] = ret
    return DailyStockPanel(out)


def permutation_null(panel, month, n_perm=20, seed=0, min_obs=MIN_OBS, window=WINDOW_MONTHS):
    """Cross-sectional mean R^2 under ``n_perm`` joint date permutations."""
    rng = make_rng(seed, 4)
    means = np.empty(n_perm)
    for k in range(n_perm):
        res = estimate_proxy_er(permuted_panel(panel, rng), month=month, min_obs=min_obs, window=window)
        means[k] = res.frame["r2"].mean()
    return means


class ProxyERTransformer(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Estimator-style wrapper: ``fit`` prepares the panel, ``transform`` returns an :class:`RSquaredPanel`.

    Parameters
    ----------
    min_obs : int, default 60
    window_months : int, default 12
    months : sequence of months, optional
        Defaults to every month with a complete window.
    workers : int, default 1
    """

    def __init__(self, min_obs=MIN_OBS, window_months=WINDOW_MONTHS, months=None, workers=1):
        self.min_obs = min_obs
        self.window_months = window_months
        self.months = months
        self.workers = workers

    def fit(self, X, y=None):
        if self.min_obs < 2:
            raise ValueError("min_obs must be >= 2")
        self.prepared_ = _PreparedPanel(X)
        self.stock_ids_ = list(self.prepared_.stock_ids)
        return self

    def transform(self, X=None):
        check_is_fitted(self, "prepared_")
        prep = self.prepared_ if X is None or X is self.prepared_.panel else _PreparedPanel(X)
        return estimate_proxy_er(prep, months=self.months, min_obs=self.min_obs,
                                 window=self.window_months, workers=self.workers)
