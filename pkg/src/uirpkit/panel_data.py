"""Stock, fund and factor panels: validated CSV I/O and seeded synthetic generators.

Panels are immutable wrappers around a sorted, typed :class:`pandas.DataFrame`.
Missing values are empty CSV fields and ``NaN`` in memory.  Files written by
this module are canonical (rows sorted by key, floats in shortest round-trip
form, LF line endings), so ``write(load(path))`` reproduces a canonical file
byte for byte.
"""

import logging
import re
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from ._io import atomic_write_text, frame_to_csv_text
from .exceptions import InvariantViolation, ParseError, SchemaError
from .ree_core import equilibrium_price, informed_demand, solve_equilibrium, uninformed_demand
from .ree_mc import sample_draws

log = logging.getLogger(__name__)

STOCK_COLUMNS = ("stock_id", "date", "ret", "cap", "sic")
FUND_COLUMNS = ("fund_id", "month", "net_ret", "tna", "expense", "turnover", "style", "index_flag")
FACTOR_COLUMNS = ("month", "mkt_excess", "smb", "hml", "umd", "rf")

SIC_CODES = ("3411", "3412", "3499", "2011", "2015", "2080", "4911", "4922", "5311", "6021", "7372", "7373")
STYLE_CODES = ("EDYG", "EDYB", "EDYI", "EDCL", "EDCM", "EDCS", "EDS")
INDEX_FLAGS = ("B", "D", "E")

_SIC_RE = re.compile(r"^\d{4}$")


def make_rng(seed, stream=0):
    """Philox generator for ``(seed, stream)``; every random draw in the package goes through here."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(stream,))))


# --------------------------------------------------------------------------- parsing


def _read_raw(path, columns):
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\r\n")
    if tuple(header.split(",")) != tuple(columns):
        raise SchemaError(f"{path}: expected header {','.join(columns)!r}, got {header!r}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False,
                      skip_blank_lines=False, encoding="utf-8")
    return raw


def _line(idx):
    # header is line 1
    return int(idx) + 2


def _parse_float(raw, col, required=True):
    text = raw[col]
    empty = text == ""
    if required and empty.any():
        raise ParseError(f"{col} is missing", _line(np.flatnonzero(empty.to_numpy())[0]))
    filled = ~empty.to_numpy()
    out = np.full(len(text), np.nan)
    try:
        out[filled] = text.to_numpy()[filled].astype(float)
        if np.isfinite(out[filled]).all():
            return out
    except ValueError:
        pass
    # slow path only to locate the offending line
    for i, s in enumerate(text.to_numpy()):
        if s == "":
            continue
        try:
            out[i] = float(s)
        except ValueError:
            raise ParseError(f"{col} value {s!r} is not a number", _line(i)) from None
        if not np.isfinite(out[i]):
            raise ParseError(f"{col} value {s!r} is not finite", _line(i))
    return out


def _parse_dates(raw, col, fmt, to_month=False):
    text = raw[col]
    parsed = pd.to_datetime(text, format=fmt, errors="coerce")
    bad = parsed.isna().to_numpy()
    if bad.any():
        i = np.flatnonzero(bad)[0]
        raise ParseError(f"{col} value {text.iloc[i]!r} does not match {fmt}", _line(i))
    return parsed.dt.to_period("M") if to_month else parsed


def _parse_ids(raw, col):
    text = raw[col]
    empty = (text.str.strip() == "").to_numpy()
    if empty.any():
        raise ParseError(f"{col} is empty", _line(np.flatnonzero(empty)[0]))
    return text


def _check_unique(frame, keys, what, lines=None):
    dup = frame.duplicated(list(keys), keep="first").to_numpy()
    if dup.any():
        i = np.flatnonzero(dup)[0]
        key = ", ".join(str(frame[k].iloc[i]) for k in keys)
        raise InvariantViolation(f"duplicate {what} ({key})", None if lines is None else lines[i])


def _check_range(values, ok, message, lines=None):
    bad = ~ok & ~np.isnan(values)
    if bad.any():
        i = np.flatnonzero(bad)[0]
        raise InvariantViolation(f"{message}, got {values[i]!r}", None if lines is None else lines[i])


# --------------------------------------------------------------------------- panels


def _month_cells(col):
    return col.dt.strftime("%Y-%m")


def _freeze(frame, keys):
    frame = frame.sort_values(list(keys), kind="mergesort").reset_index(drop=True)
    return frame


@dataclass(frozen=True, eq=False)
class DailyStockPanel:
    """Daily stock records ``(stock_id, date, ret, cap, sic)``.

    ``ret`` is a simple return (> -1), ``cap`` a nonnegative market value and
    ``sic`` a four-digit string.  Records are sorted by stock then date.
    """

    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame, lines=None):
        frame = pd.DataFrame(frame).copy()
        missing = [c for c in STOCK_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"stock panel is missing columns {missing}")
        frame = frame[list(STOCK_COLUMNS)]
        frame["stock_id"] = frame["stock_id"].astype(str)
        frame["date"] = pd.to_datetime(frame["date"]).astype("datetime64[ns]")
        frame["ret"] = frame["ret"].astype(float)
        frame["cap"] = frame["cap"].astype(float)
        frame["sic"] = frame["sic"].astype(str)
        ret, cap = frame["ret"].to_numpy(), frame["cap"].to_numpy()
        if np.isnan(ret).any() or np.isnan(cap).any():
            raise InvariantViolation("ret and cap must be present on every record")
        _check_range(ret, ret > -1, "ret must exceed -1", lines)
        _check_range(cap, cap >= 0, "cap must be nonnegative", lines)
        bad_sic = ~frame["sic"].str.match(_SIC_RE).to_numpy()
        if bad_sic.any():
            i = np.flatnonzero(bad_sic)[0]
            raise InvariantViolation(f"sic must be four digits, got {frame['sic'].iloc[i]!r}",
                                     None if lines is None else lines[i])
        _check_unique(frame, ("stock_id", "date"), "stock record", lines)
        return cls(_freeze(frame, ("stock_id", "date")))

    def __len__(self):
        return len(self.frame)

    @property
    def stock_ids(self):
        return sorted(self.frame["stock_id"].unique())

    @property
    def months(self):
        return pd.period_range(self.frame["date"].min(), self.frame["date"].max(), freq="M")

    def to_csv_text(self):
        return frame_to_csv_text(self.frame, {"date": lambda col: col.dt.strftime("%Y-%m-%d")})


@dataclass(frozen=True, eq=False)
class FundPanel:
    """Monthly fund records; ``expense``, ``turnover`` and ``tna`` may be missing (NaN)."""

    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame, lines=None):
        frame = pd.DataFrame(frame).copy()
        for col in ("expense", "turnover"):
            if col not in frame.columns:
                frame[col] = np.nan
        for col in ("style", "index_flag"):
            if col not in frame.columns:
                frame[col] = ""
        missing = [c for c in FUND_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"fund panel is missing columns {missing}")
        frame = frame[list(FUND_COLUMNS)]
        frame["fund_id"] = frame["fund_id"].astype(str)
        frame["month"] = pd.PeriodIndex(frame["month"], freq="M")
        for col in ("net_ret", "tna", "expense", "turnover"):
            frame[col] = frame[col].astype(float)
        frame["style"] = frame["style"].fillna("").astype(str)
        frame["index_flag"] = frame["index_flag"].fillna("").astype(str)
        net = frame["net_ret"].to_numpy()
        if np.isnan(net).any():
            i = np.flatnonzero(np.isnan(net))[0]
            raise InvariantViolation("net_ret must be present", None if lines is None else lines[i])
        for col in ("tna", "expense", "turnover"):
            vals = frame[col].to_numpy()
            _check_range(vals, vals >= 0, f"{col} must be nonnegative", lines)
        long_flag = (frame["index_flag"].str.len() > 1).to_numpy()
        if long_flag.any():
            i = np.flatnonzero(long_flag)[0]
            raise InvariantViolation("index_flag must be a single character", None if lines is None else lines[i])
        _check_unique(frame, ("fund_id", "month"), "fund record", lines)
        return cls(_freeze(frame, ("fund_id", "month")))

    def __len__(self):
        return len(self.frame)

    @property
    def fund_ids(self):
        return sorted(self.frame["fund_id"].unique())

    def subset(self, mask):
        return FundPanel(self.frame.loc[np.asarray(mask)].reset_index(drop=True))

    def to_csv_text(self):
        return frame_to_csv_text(self.frame, {"month": _month_cells})


@dataclass(frozen=True, eq=False)
class FactorPanel:
    """Monthly factor returns indexed by a contiguous run of months."""

    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame, lines=None):
        frame = pd.DataFrame(frame).copy()
        missing = [c for c in FACTOR_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"factor panel is missing columns {missing}")
        frame = frame[list(FACTOR_COLUMNS)]
        frame["month"] = pd.PeriodIndex(frame["month"], freq="M")
        for col in FACTOR_COLUMNS[1:]:
            frame[col] = frame[col].astype(float)
            if frame[col].isna().any():
                i = np.flatnonzero(frame[col].isna().to_numpy())[0]
                raise InvariantViolation(f"{col} must be present", None if lines is None else lines[i])
        _check_unique(frame, ("month",), "factor month", lines)
        frame = _freeze(frame, ("month",))
        if len(frame):
            expected = pd.period_range(frame["month"].iloc[0], frame["month"].iloc[-1], freq="M")
            if len(expected) != len(frame):
                gaps = expected.difference(pd.PeriodIndex(frame["month"]))
                raise InvariantViolation(f"factor months are not contiguous; first gap at {gaps[0]}")
        return cls(frame)

    def __len__(self):
        return len(self.frame)

    @property
    def indexed(self):
        return self.frame.set_index("month")

    def to_csv_text(self):
        return frame_to_csv_text(self.frame, {"month": _month_cells})


# --------------------------------------------------------------------------- loaders / writers


def load_stock_csv(path):
    raw = _read_raw(path, STOCK_COLUMNS)
    lines = np.arange(len(raw)) + 2
    frame = pd.DataFrame({
        "stock_id": _parse_ids(raw, "stock_id"),
        "date": _parse_dates(raw, "date", "%Y-%m-%d"),
        "ret": _parse_float(raw, "ret"),
        "cap": _parse_float(raw, "cap"),
        "sic": raw["sic"],
    })
    return DailyStockPanel.from_frame(frame, lines=lines)


def load_fund_csv(path):
    raw = _read_raw(path, FUND_COLUMNS)
    lines = np.arange(len(raw)) + 2
    frame = pd.DataFrame({
        "fund_id": _parse_ids(raw, "fund_id"),
        "month": _parse_dates(raw, "month", "%Y-%m", to_month=True),
        "net_ret": _parse_float(raw, "net_ret"),
        "tna": _parse_float(raw, "tna", required=False),
        "expense": _parse_float(raw, "expense", required=False),
        "turnover": _parse_float(raw, "turnover", required=False),
        "style": raw["style"],
        "index_flag": raw["index_flag"],
    })
    return FundPanel.from_frame(frame, lines=lines)


def load_factor_csv(path):
    raw = _read_raw(path, FACTOR_COLUMNS)
    lines = np.arange(len(raw)) + 2
    frame = pd.DataFrame({"month": _parse_dates(raw, "month", "%Y-%m", to_month=True)})
    for col in FACTOR_COLUMNS[1:]:
        frame[col] = _parse_float(raw, col)
    return FactorPanel.from_frame(frame, lines=lines)


def write_panel_csv(panel, path):
    atomic_write_text(path, panel.to_csv_text())


# --------------------------------------------------------------------------- synthetic generators


@dataclass(frozen=True)
class DailyGenerator:
    """Parameters of the synthetic daily log-price process.

    log price = common market walk + idiosyncratic walk + transitory AR(1).
    The AR(1) innovation variance is ``psi * transitory_vol**2``; with
    ``scale_permanent`` the idiosyncratic walk variance shrinks by
    ``(1 - psi)`` so that total idiosyncratic noise stays comparable.
    """

    market_vol: float = 0.01
    idio_vol: float = 0.005
    transitory_vol: float = 0.02
    persistence: float = 0.5
    scale_permanent: bool = True
    log_cap_mean: float = 20.0
    log_cap_sd: float = 1.0

    def to_dict(self):
        return asdict(self)


#: Idiosyncratic 2% random walk plus a 0.9-persistence AR(1); kept for comparison.
PURE_WALK_AR_GENERATOR = DailyGenerator(market_vol=0.0, idio_vol=0.02, transitory_vol=0.02,
                                        persistence=0.9, scale_permanent=False)


def synth_daily_panel(seed, n_stocks, n_days, psi_range=(0.0, 0.9), start="2000-01-03",
                      generator=DailyGenerator(), sic_codes=SIC_CODES):
    """Seeded daily stock panel with a known informativeness ``psi`` per stock.

    Returns
    -------
    panel : DailyStockPanel
    psi : pandas.Series
        Injected ``psi`` indexed by stock_id.
    """
    if n_stocks < 2:
        raise ValueError("n_stocks must be >= 2")
    if n_days < 300:
        raise ValueError("n_days must be >= 300")
    lo, hi = map(float, psi_range)
    if not 0 <= lo <= hi <= 1:
        raise ValueError(f"psi_range must lie within [0, 1], got {psi_range}")
    g = generator
    rng = make_rng(seed, 0)
    psi = rng.uniform(lo, hi, n_stocks)
    log_cap = rng.normal(g.log_cap_mean, g.log_cap_sd, n_stocks)

    steps = n_days + 1  # one base level before the first return
    market = np.cumsum(rng.standard_normal(steps)) * g.market_vol
    perm_scale = g.idio_vol * (np.sqrt(1 - psi) if g.scale_permanent else np.ones(n_stocks))
    walk = np.cumsum(rng.standard_normal((steps, n_stocks)), axis=0) * perm_scale
    shocks = rng.standard_normal((steps, n_stocks)) * (np.sqrt(psi) * g.transitory_vol)
    transitory = lfilter([1.0], [1.0, -g.persistence], shocks, axis=0)
    log_price = market[:, None] + walk + transitory
    ret = np.expm1(np.diff(log_price, axis=0))

    dates = pd.bdate_range(start, periods=n_days)
    ids = [f"S{i:04d}" for i in range(n_stocks)]
    sic = [sic_codes[i % len(sic_codes)] for i in range(n_stocks)]
    frame = pd.DataFrame({
        "stock_id": np.repeat(ids, n_days),
        "date": np.tile(dates.values, n_stocks),
        "ret": ret.T.ravel(),
        "cap": np.repeat(np.exp(log_cap), n_days),
        "sic": np.repeat(sic, n_days),
    })
    return DailyStockPanel.from_frame(frame), pd.Series(psi, index=pd.Index(ids, name="stock_id"), name="psi")


@dataclass(frozen=True, eq=False)
class GsPanel:
    """Repeated independent one-period economies.

    ``returns`` holds ``P1 - P0`` per asset; the ``*_payoff`` arrays are
    per-period dollar payoffs ``holdings . (P1 - P0)``.  ``fund_payoff`` is
    the uninformed-optimal portfolio held with independent zero-mean
    tracking error in the share counts.
    """

    returns: np.ndarray
    supply: np.ndarray
    informed_holdings: np.ndarray
    uninformed_holdings: np.ndarray
    informed_payoff: np.ndarray
    uninformed_payoff: np.ndarray
    market_payoff: np.ndarray
    fund_payoff: np.ndarray
    seed: int = None

    def __len__(self):
        return self.returns.shape[0]


def synth_gs_panel(params, seed, n_periods, tracking_noise=0.25, sol=None):
    """Simulate ``n_periods`` independent equilibria of ``params``."""
    if n_periods < 100:
        raise ValueError("n_periods must be >= 100")
    sol = solve_equilibrium(params) if sol is None else sol
    draws = sample_draws(params, sol, seed, n_periods)
    price = equilibrium_price(sol, params, draws.theta, draws.supply)
    ret = draws.payoff1 - price
    x_inf = informed_demand(params, draws.theta, price)
    x_uninf = uninformed_demand(sol, params, price)
    # a separate stream so the economy itself does not depend on the noise level
    noise = make_rng(seed, 1 << 20).standard_normal(ret.shape) * tracking_noise
    return GsPanel(
        returns=ret,
        supply=draws.supply,
        informed_holdings=x_inf,
        uninformed_holdings=x_uninf,
        informed_payoff=np.einsum("ij,ij->i", x_inf, ret),
        uninformed_payoff=np.einsum("ij,ij->i", x_uninf, ret),
        market_payoff=np.einsum("ij,ij->i", draws.supply, ret),
        fund_payoff=np.einsum("ij,ij->i", x_uninf + noise, ret),
        seed=int(seed),
    )


def synth_factor_panel(seed, months, market_returns=None, rf_mean=0.003):
    """Monthly factor panel over ``months``.

    Parameters
    ----------
    months : sequence of month periods, or int
        An int gives that many months starting 2000-01.
    market_returns : pandas.Series, optional
        Monthly market returns indexed by month; when given ``mkt_excess``
        is that series minus ``rf`` instead of a random draw.
    """
    if isinstance(months, (int, np.integer)):
        months = pd.period_range("2000-01", periods=int(months), freq="M")
    months = pd.PeriodIndex(months, freq="M")
    rng = make_rng(seed, 2)
    n = len(months)
    rf = np.clip(rf_mean + 0.0001 * np.cumsum(rng.standard_normal(n)), 0.0, None)
    smb = rng.normal(0.002, 0.03, n)
    hml = rng.normal(0.003, 0.03, n)
    umd = rng.normal(0.006, 0.04, n)
    mkt = rng.normal(0.006, 0.045, n)
    if market_returns is not None:
        mkt_ret = pd.Series(market_returns).reindex(months).to_numpy(dtype=float)
        if np.isnan(mkt_ret).any():
            raise ValueError("market_returns must cover every month")
        mkt = mkt_ret - rf
    frame = pd.DataFrame({"month": months, "mkt_excess": mkt, "smb": smb, "hml": hml, "umd": umd, "rf": rf})
    return FactorPanel.from_frame(frame)


@dataclass(frozen=True)
class FundGenerator:
    noise_sd: float = 0.01
    alpha_sd: float = 0.01  # annual
    beta_mkt: tuple = (0.8, 1.1)
    beta_other_sd: float = 0.2
    expense_range: tuple = (0.002, 0.025)
    turnover_median: float = 0.8
    expense_missing: float = 0.1
    turnover_missing: float = 0.1
    index_share: float = 0.1
    stagger_share: float = 0.3  # entry months spread over this share of the sample

    def to_dict(self):
        return asdict(self)


def synth_fund_panel(seed, n_funds, n_months, factor_panel, generator=FundGenerator(),
                     alphas=None, betas=None):
    """Funds whose returns follow a known linear factor model.

    ``net_ret = rf + alpha/12 + betas . (mkt_excess, smb, hml, umd) + noise``.

    Parameters
    ----------
    n_months : int
        Uses the last ``n_months`` months of ``factor_panel``.
    alphas : array-like (n_funds,), optional
        Annual alphas; random by default.
    betas : array-like (n_funds, 4), optional

    Returns
    -------
    funds : FundPanel
    truth : pandas.DataFrame
        ``fund_id, alpha_annual, beta_mkt, beta_smb, beta_hml, beta_umd``.
    """
    g = generator
    fac = factor_panel.frame
    if n_months > len(fac):
        raise ValueError("factor_panel does not cover n_months")
    fac = fac.iloc[len(fac) - n_months:].reset_index(drop=True)
    rng = make_rng(seed, 3)
    ids = [f"F{i:03d}" for i in range(n_funds)]
    if alphas is None:
        alphas = rng.normal(0.0, g.alpha_sd, n_funds)
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (n_funds,))
    if betas is None:
        betas = np.column_stack([
            rng.uniform(*g.beta_mkt, n_funds),
            rng.normal(0, g.beta_other_sd, (n_funds, 3)),
        ])
    betas = np.broadcast_to(np.asarray(betas, dtype=float), (n_funds, 4))
    X = fac[["mkt_excess", "smb", "hml", "umd"]].to_numpy()
    rf = fac["rf"].to_numpy()
    last_entry = max(int(g.stagger_share * n_months), 0)
    entry = rng.integers(0, last_entry + 1, n_funds)
    entry[0] = 0
    style = rng.choice(len(STYLE_CODES), n_funds)
    is_index = rng.random(n_funds) < g.index_share
    flag = rng.choice(len(INDEX_FLAGS), n_funds)
    base_expense = rng.uniform(*g.expense_range, n_funds)
    base_turn = g.turnover_median * np.exp(rng.normal(0, 0.5, n_funds))
    tna0 = np.exp(rng.normal(5.0, 1.5, n_funds))

    parts = []
    for i, fid in enumerate(ids):
        sl = slice(entry[i], n_months)
        m = n_months - entry[i]
        noise = rng.standard_normal(m) * g.noise_sd
        net = rf[sl] + alphas[i] / 12 + X[sl] @ betas[i] + noise
        tna = tna0[i] * np.exp(np.cumsum(rng.normal(0.005, 0.05, m)))
        # expenses drift once a year, turnover varies month to month
        expense = base_expense[i] * np.exp(np.repeat(rng.normal(0, 0.05, m // 12 + 1), 12)[:m])
        turnover = base_turn[i] * np.exp(rng.normal(0, 0.1, m))
        expense[rng.random(m) < g.expense_missing] = np.nan
        turnover[rng.random(m) < g.turnover_missing] = np.nan
        parts.append(pd.DataFrame({
            "fund_id": fid,
            "month": fac["month"].iloc[sl].to_numpy(),
            "net_ret": net,
            "tna": tna,
            "expense": expense,
            "turnover": turnover,
            "style": STYLE_CODES[style[i]],
            "index_flag": INDEX_FLAGS[flag[i]] if is_index[i] else "",
        }))
    funds = FundPanel.from_frame(pd.concat(parts, ignore_index=True))
    truth = pd.DataFrame({
        "fund_id": ids,
        "alpha_annual": alphas,
        "beta_mkt": betas[:, 0],
        "beta_smb": betas[:, 1],
        "beta_hml": betas[:, 2],
        "beta_umd": betas[:, 3],
    })
    return funds, truth
