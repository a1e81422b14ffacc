"""Fund portfolio construction and factor-model performance evaluation.

Portfolio returns weight each member fund by its total net assets at the
end of the previous month.  Alphas come from OLS of the portfolio return in
excess of the risk-free rate on a reference return (the market in excess
of rf, or the raw UIRP return) plus optional SMB/HML/UMD factors, and are
annualized as ``12 * intercept`` (a decimal, 0.012 = 1.2% per year).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from ._io import frame_to_csv_text
from .exceptions import EmptyMonth, InsufficientData, RankDeficient
from .panel_data import INDEX_FLAGS, FactorPanel, FundPanel
from .regression import ols_fit
from .uirp import UirpSeries

log = logging.getLogger(__name__)

OPTIONAL_FACTORS = ("smb", "hml", "umd")
MIN_MONTHS = 24
SELECTIVITY_BLOCK = 36
SELECTIVITY_MIN_OBS = 30
N_DECILES = 10


class Characteristic(str, Enum):
    EXPENSE = "expense"
    TURNOVER = "turnover"
    TNA = "tna"


class Reference(str, Enum):
    MARKET = "market"
    UIRP = "uirp"


@dataclass(frozen=True)
class ModelSpec:
    """Reference portfolio plus an ordered subset of the optional factors."""

    reference: Reference
    factors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "reference", Reference(self.reference))
        bad = [f for f in self.factors if f not in OPTIONAL_FACTORS]
        if bad:
            raise ValueError(f"unknown factors {bad}; choose from {OPTIONAL_FACTORS}")
        object.__setattr__(self, "factors", tuple(f for f in OPTIONAL_FACTORS if f in self.factors))

    @property
    def factor_label(self):
        return "+".join(self.factors) if self.factors else "none"


STANDARD_SPECS = (
    ModelSpec(Reference.MARKET),
    ModelSpec(Reference.MARKET, OPTIONAL_FACTORS),
    ModelSpec(Reference.UIRP),
    ModelSpec(Reference.UIRP, OPTIONAL_FACTORS),
)


# --------------------------------------------------------------------------- fund frames


def fund_frame(funds):
    """Fund records with ``tna_lag`` (TNA at the same fund's record for month t-1)."""
    if not isinstance(funds, FundPanel):
        raise TypeError("expected a FundPanel")
    f = funds.frame.copy()
    prev = f[["fund_id", "month", "tna"]].copy()
    prev["month"] = prev["month"] + 1
    f = f.merge(prev.rename(columns={"tna": "tna_lag"}), on=["fund_id", "month"], how="left")
    f["expense_filled"] = f.groupby("fund_id", sort=False)["expense"].ffill()
    return f


def _all_months(frame):
    if frame.empty:
        return pd.PeriodIndex([], freq="M")
    return pd.period_range(frame["month"].min(), frame["month"].max(), freq="M")


def _grouped_returns(frame, labels, months):
    """TNA-lag-weighted returns per (month, label); ``labels`` NaN means not a member."""
    w = frame["tna_lag"].to_numpy()
    ok = (~np.isnan(w)) & (w > 0) & labels.notna().to_numpy()
    sub = pd.DataFrame({
        "month": frame["month"].to_numpy()[ok],
        "label": labels.to_numpy()[ok],
        "wr": w[ok] * frame["net_ret"].to_numpy()[ok],
        "w": w[ok],
    })
    sums = sub.groupby(["month", "label"], sort=True)[["wr", "w"]].sum()
    ret = (sums["wr"] / sums["w"]).unstack("label")
    return ret.reindex(pd.PeriodIndex(months, freq="M"))


def tna_weighted_portfolio(funds, members=None):
    """Monthly return of the TNA-weighted portfolio of member funds.

    Parameters
    ----------
    funds : FundPanel
    members : None, iterable of fund ids, or callable
        A callable receives the record frame and returns a boolean mask.

    Returns
    -------
    pandas.Series
        Indexed by month; months without any eligible member are dropped and
        listed in ``series.attrs["omitted_months"]``.
    """
    f = fund_frame(funds)
    if members is None:
        mask = np.ones(len(f), dtype=bool)
    elif callable(members):
        mask = np.asarray(members(f), dtype=bool)
    else:
        mask = f["fund_id"].isin(set(map(str, members))).to_numpy()
    labels = pd.Series(np.where(mask, "portfolio", None), index=f.index)
    ret = _grouped_returns(f, labels, _all_months(f))
    series = ret["portfolio"] if "portfolio" in ret else pd.Series(np.nan, index=ret.index)
    omitted = list(series.index[series.isna()])
    series = series.dropna().rename("portfolio")
    series.attrs["omitted_months"] = omitted
    return series


def characteristic_values(f, characteristic):
    if isinstance(characteristic, pd.Series):
        key = pd.MultiIndex.from_arrays([f["fund_id"], f["month"]])
        return pd.Series(characteristic.reindex(key).to_numpy(dtype=float), index=f.index)
    characteristic = Characteristic(characteristic)
    col = {Characteristic.EXPENSE: "expense_filled", Characteristic.TURNOVER: "turnover",
           Characteristic.TNA: "tna_lag"}[characteristic]
    return f[col].astype(float)


def decile_assignments(funds, characteristic, n_groups=N_DECILES):
    """Rank eligible funds each month and map rank ``r`` of ``n`` to group ``ceil(n_groups r / n)``.

    Eligible funds have the characteristic, a return and a positive
    previous-month TNA.  Ties are broken by fund_id.

    Parameters
    ----------
    characteristic : Characteristic or pandas.Series
        A Series must be indexed by (fund_id, month).
    """
    f = fund_frame(funds) if isinstance(funds, FundPanel) else funds
    value = characteristic_values(f, characteristic)
    w = f["tna_lag"]
    ok = value.notna() & w.notna() & (w > 0)
    ranked = pd.DataFrame({"fund_id": f["fund_id"][ok], "month": f["month"][ok], "value": value[ok]})
    ranked = ranked.sort_values(["month", "value", "fund_id"], kind="mergesort")
    rank = ranked.groupby("month", sort=False).cumcount().to_numpy() + 1
    n = ranked.groupby("month", sort=False)["fund_id"].transform("size").to_numpy()
    ranked["decile"] = (n_groups * rank + n - 1) // n
    return ranked.sort_index()


def decile_portfolios(funds, characteristic, n_groups=N_DECILES):
    """Monthly TNA-weighted returns of the ``n_groups`` characteristic-sorted portfolios.

    Returns a frame indexed by month with columns ``1..n_groups``; a decile
    that is empty in some month has NaN there.
    """
    f = fund_frame(funds)
    assign = decile_assignments(f, characteristic, n_groups)
    labels = pd.Series(np.nan, index=f.index)
    labels.loc[assign.index] = assign["decile"].astype(float)
    out = _grouped_returns(f, labels, _all_months(f))
    out = out.reindex(columns=[float(k) for k in range(1, n_groups + 1)])
    out.columns = list(range(1, n_groups + 1))
    return out.dropna(how="all")


def style_portfolios(funds):
    f = fund_frame(funds)
    labels = f["style"].where(f["style"] != "", None)
    return _grouped_returns(f, labels, _all_months(f)).dropna(how="all")


def index_funds(funds, flags=INDEX_FLAGS):
    return funds.subset(funds.frame["index_flag"].isin(flags))


def active_funds(funds, flags=INDEX_FLAGS):
    return funds.subset(~funds.frame["index_flag"].isin(flags))


# --------------------------------------------------------------------------- selectivity


@dataclass(frozen=True, eq=False)
class SelectivityPanel:
    """Per fund and 36-month block: R^2 against the one- and four-factor models."""

    frame: pd.DataFrame

    def characteristic(self, spec="4f", block=SELECTIVITY_BLOCK):
        """R^2 of each block assigned to every month of the following block.

        Returns a Series indexed by (fund_id, month) usable as a sorting characteristic.
        """
        col = {"1f": "r2_1f", "4f": "r2_4f"}[spec]
        keys, vals = [], []
        for fid, start, value in zip(self.frame["fund_id"], self.frame["start_month"], self.frame[col]):
            for k in range(block):
                keys.append((fid, start + block + k))
                vals.append(value)
        idx = pd.MultiIndex.from_tuples(keys, names=["fund_id", "month"]) if keys else \
            pd.MultiIndex.from_arrays([[], pd.PeriodIndex([], freq="M")], names=["fund_id", "month"])
        return pd.Series(vals, index=idx, dtype=float, name=col)

    def to_csv_text(self):
        return frame_to_csv_text(self.frame, {"start_month": lambda col: col.dt.strftime("%Y-%m")})


def selectivity_r2(funds, factors, block=SELECTIVITY_BLOCK, min_obs=SELECTIVITY_MIN_OBS):
    """Fund-level R^2 over nonoverlapping blocks starting at each fund's first month."""
    fac = factors.indexed if isinstance(factors, FactorPanel) else factors
    f = funds.frame
    rows = []
    for fid, g in f.groupby("fund_id", sort=True):
        first = g["month"].min()
        offset = (g["month"] - first).map(lambda d: d.n).to_numpy()
        g = g.assign(block=offset // block)
        for b, gb in g.groupby("block", sort=True):
            months = pd.PeriodIndex(gb["month"])
            have = months.isin(fac.index)
            if have.sum() < min_obs:
                continue
            fx = fac.loc[months[have]]
            y = gb["net_ret"].to_numpy()[have] - fx["rf"].to_numpy()
            try:
                r1 = ols_fit(fx[["mkt_excess"]].to_numpy(), y).r_squared
                r4 = ols_fit(fx[["mkt_excess", *OPTIONAL_FACTORS]].to_numpy(), y).r_squared
            except (RankDeficient, InsufficientData) as exc:
                log.info("selectivity block %s/%d skipped: %s", fid, b, exc)
                continue
            rows.append((fid, first + int(b) * block, r1, r4, int(have.sum())))
    frame = pd.DataFrame(rows, columns=["fund_id", "start_month", "r2_1f", "r2_4f", "n_obs"])
    frame["start_month"] = pd.PeriodIndex(frame["start_month"], freq="M")
    return SelectivityPanel(frame)


# --------------------------------------------------------------------------- alphas


@dataclass(frozen=True, eq=False)
class AlphaResult:
    spec: ModelSpec
    alpha_annual: float
    t_alpha: float
    beta_ref: float
    t_ref: float
    factor_betas: dict
    factor_t: dict
    r2: float
    n_months: int
    fit: object = None


def _as_series(obj, name):
    if isinstance(obj, UirpSeries):
        return obj.returns
    if isinstance(obj, pd.Series):
        s = obj.copy()
        s.index = pd.PeriodIndex(s.index, freq="M")
        return s
    raise TypeError(f"{name} must be a pandas Series or UirpSeries")


def alpha_report(series, factors, uirp=None, spec=STANDARD_SPECS[0], uirp_excess=False, min_months=MIN_MONTHS):
    """Fit one factor model to one monthly return series.

    Parameters
    ----------
    series : pandas.Series
        Monthly portfolio returns indexed by month.
    factors : FactorPanel
    uirp : UirpSeries or pandas.Series, optional
        Required for UIRP-referenced specs.
    spec : ModelSpec
    uirp_excess : bool
        Enter UIRP net of rf instead of raw.

    Returns
    -------
    AlphaResult
    """
    spec = spec if isinstance(spec, ModelSpec) else ModelSpec(*spec)
    fac = factors.indexed if isinstance(factors, FactorPanel) else factors
    y_all = _as_series(series, "series").dropna()
    data = pd.DataFrame({"ret": y_all}).join(fac, how="inner")
    if spec.reference is Reference.UIRP:
        if uirp is None:
            raise ValueError("a UIRP series is required for a UIRP-referenced spec")
        data = data.join(_as_series(uirp, "uirp").rename("uirp").dropna(), how="inner")
        ref = data["uirp"] - data["rf"] if uirp_excess else data["uirp"]
    else:
        ref = data["mkt_excess"]
    n = len(data)
    if n < min_months:
        raise InsufficientData(f"{n} overlapping months, need at least {min_months}")
    X = np.column_stack([ref.to_numpy(), data[list(spec.factors)].to_numpy()]) if spec.factors \
        else ref.to_numpy()[:, None]
    fit = ols_fit(X, (data["ret"] - data["rf"]).to_numpy())
    coef, t = fit.coefficients, fit.t_stats
    return AlphaResult(
        spec=spec,
        alpha_annual=12.0 * fit.intercept,
        t_alpha=float(t[0]),
        beta_ref=float(coef[0]),
        t_ref=float(t[1]),
        factor_betas={f: float(coef[1 + j]) for j, f in enumerate(spec.factors)},
        factor_t={f: float(t[2 + j]) for j, f in enumerate(spec.factors)},
        r2=fit.r_squared,
        n_months=n,
        fit=fit,
    )


ALPHA_COLUMNS = ["portfolio", "reference", "factors", "alpha_annual", "t_alpha", "beta_ref", "r2", "n_months"] + \
    [c for f in OPTIONAL_FACTORS for c in (f"beta_{f}", f"t_{f}")] + ["t_ref"]


@dataclass
class PerformanceReport:
    """Alpha results per (portfolio, spec) plus the combinations that could not be fitted."""

    results: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    uirp_excess: bool = False

    def to_frame(self):
        rows = []
        for name, res in self.results:
            row = {
                "portfolio": name, "reference": res.spec.reference.value, "factors": res.spec.factor_label,
                "alpha_annual": res.alpha_annual, "t_alpha": res.t_alpha, "beta_ref": res.beta_ref,
                "r2": res.r2, "n_months": res.n_months, "t_ref": res.t_ref,
            }
            for f in OPTIONAL_FACTORS:
                row[f"beta_{f}"] = res.factor_betas.get(f, np.nan)
                row[f"t_{f}"] = res.factor_t.get(f, np.nan)
            rows.append(row)
        return pd.DataFrame(rows, columns=ALPHA_COLUMNS)

    def get(self, portfolio, spec):
        for name, res in self.results:
            if name == portfolio and res.spec == spec:
                return res
        raise KeyError((portfolio, spec))

    def to_csv_text(self):
        return frame_to_csv_text(self.to_frame())


def performance_report(portfolios, factors, uirp=None, specs=STANDARD_SPECS, uirp_excess=False,
                       min_months=MIN_MONTHS):
    """Run every spec on every portfolio; ``portfolios`` maps name to a monthly Series."""
    report = PerformanceReport(uirp_excess=uirp_excess)
    for name, series in portfolios.items():
        for spec in specs:
            if spec.reference is Reference.UIRP and uirp is None:
                report.skipped.append((name, spec, "no UIRP series"))
                continue
            try:
                res = alpha_report(series, factors, uirp, spec, uirp_excess=uirp_excess, min_months=min_months)
            except (InsufficientData, RankDeficient, EmptyMonth) as exc:
                report.skipped.append((name, spec, str(exc)))
                log.info("no alpha for %s / %s: %s", name, spec, exc)
                continue
            report.results.append((name, res))
    return report


def standard_portfolios(funds, selectivity=None):
    """The portfolio set evaluated by default: all funds, styles and characteristic deciles."""
    out = {"all_funds": tna_weighted_portfolio(funds)}
    for style, col in style_portfolios(funds).items():
        out[f"style_{style}"] = col.dropna()
    for ch in Characteristic:
        for k, col in decile_portfolios(funds, ch).items():
            out[f"{ch.value}_d{k:02d}"] = col.dropna()
    if selectivity is not None and len(selectivity.frame):
        for spec in ("1f", "4f"):
            for k, col in decile_portfolios(funds, selectivity.characteristic(spec)).items():
                out[f"selectivity{spec}_d{k:02d}"] = col.dropna()
    return out


def cumulative_value(series_map):
    """Value of one unit invested at the start of each series; flat over missing months."""
    frame = pd.DataFrame({name: _as_series(s, name) for name, s in series_map.items()})
    frame = frame.sort_index()
    started = frame.notna().cummax()
    value = (1.0 + frame.fillna(0.0)).cumprod()
    return value.where(started)
