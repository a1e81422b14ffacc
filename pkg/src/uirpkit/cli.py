"""Command-line front end: ``uirpkit <subcommand> [--config FILE] [--out DIR] ...``.

Every subcommand reads an optional JSON config (unknown keys are rejected),
applies flag overrides, writes its CSV outputs plus ``run_meta_<cmd>.json``
atomically into ``--out``, and exits 0 on success, 1 on runtime failure and
2 on usage or config errors.
"""

import argparse
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from ._io import StagedOutputs, frame_to_csv_text
from .exceptions import UirpkitError
from .panel_data import (
    DailyGenerator,
    FundGenerator,
    load_factor_csv,
    load_fund_csv,
    load_stock_csv,
    synth_daily_panel,
    synth_factor_panel,
    synth_fund_panel,
)
from .perf_eval import (
    STANDARD_SPECS,
    active_funds,
    cumulative_value,
    index_funds,
    performance_report,
    selectivity_r2,
    standard_portfolios,
)
from .proxy_er import estimate_proxy_er, load_r2_csv
from .ree_core import EconomyParams, ProxyVariant
from .ree_mc import REFERENCE_TABLE1, STATISTICS, match_reference_blocks, mc_validation_report, table1_report
from .uirp import build_uirp_series, load_uirp_csv, monthly_stock_returns

log = logging.getLogger("uirpkit")


class ConfigError(UirpkitError):
    """Malformed or unknown configuration; maps to exit code 2."""


DEFAULTS = {
    "simulate-table1": {
        "seed": 0,
        "variant": "cond_u",
        "risk_aversion": 0.1,
        "informed_fraction": 0.4,
        "mean_info": [0.0, 0.0],
        "mean_supply": [1.0, 1.0],
        "z11_values": list(range(1, 11)),
        "clearing_draws": 10_000,
        "condvar_draws": 1_000_000,
        "condvar_z11": [10],
        "workers": 1,
    },
    "synth": {
        "seed": 0,
        "n_stocks": 200,
        "n_days": 2520,
        "psi_range": [0.0, 0.9],
        "start_date": "2000-01-03",
        "generator": DailyGenerator().to_dict(),
        "n_funds": 40,
        "fund_generator": FundGenerator().to_dict(),
    },
    "estimate-proxy": {
        "stocks": None,
        "months": None,
        "min_obs": 60,
        "window_months": 12,
        "workers": 1,
    },
    "build-uirp": {
        "stocks": None,
        "proxy_er": None,
    },
    "evaluate": {
        "funds": None,
        "factors": None,
        "uirp": None,
        "uirp_excess": False,
        "index_filter": "exclude",
        "min_months": 24,
        "selectivity": True,
    },
}


def _check_type(key, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be true or false")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"config key {key!r} must be a list")
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"config key {key!r} must be an object")
        unknown = sorted(set(value) - set(default))
        if unknown:
            raise ConfigError(f"unknown keys in {key!r}: {', '.join(unknown)}")
        value = {k: _check_type(f"{key}.{k}", value.get(k, d), d) for k, d in default.items()}
    return value


def resolve_config(command, path=None, overrides=None):
    """Merge defaults, the JSON file at ``path`` and flag ``overrides`` (flags win)."""
    defaults = DEFAULTS[command]
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in defaults:
                raise ConfigError(f"option --{key.replace('_', '-')} does not apply to {command}")
            user[key] = value
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    return {k: _check_type(k, user.get(k, d), d) for k, d in defaults.items()}


def _versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "pandas", "scikit-learn"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _run_meta(command, config, extra=None):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    meta = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": config.get("seed"),
        "versions": _versions(),
    }
    meta.update(extra or {})
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def _input(config, key, out_dir, default_name):
    path = Path(config[key]) if config.get(key) else Path(out_dir) / default_name
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    return path


# --------------------------------------------------------------------------- commands


def cmd_simulate_table1(config, out):
    variant = ProxyVariant(config["variant"])
    base = EconomyParams(
        risk_aversion=config["risk_aversion"],
        informed_fraction=config["informed_fraction"],
        info_cov=np.eye(2), residual_cov=np.eye(2), supply_cov=np.eye(2),
        mean_info=config["mean_info"], mean_supply=config["mean_supply"],
    )
    z11 = config["z11_values"]
    report = table1_report(base, variant, seed=config["seed"], z11_values=z11)
    mc = mc_validation_report(base, seed=config["seed"], clearing_draws=config["clearing_draws"],
                              condvar_draws=config["condvar_draws"], condvar_z11=tuple(config["condvar_z11"]),
                              z11_values=z11, workers=config["workers"])
    mapping = {}
    if list(z11) == list(range(1, 11)):
        mapping = match_reference_blocks(report)
        extra = []
        for computed, ref in mapping.items():
            if ref is None:
                continue
            gap = max(float(np.max(np.abs(report.series(computed, s) - np.asarray(REFERENCE_TABLE1[ref][s]))))
                      for s in STATISTICS)
            extra.append({"config": computed, "z11": np.nan, "check": "reference_block", "component": ref,
                          "estimate": gap, "analytic": 0.0, "rel_error": np.nan, "n_draws": 0,
                          "seed": config["seed"]})
        mc = pd.concat([mc, pd.DataFrame(extra)], ignore_index=True)
    out.add("table1.csv", frame_to_csv_text(report.to_frame()))
    out.add("mc_report.csv", frame_to_csv_text(mc))
    return {"variant": variant.value, "reference_block_mapping": mapping}


def cmd_synth(config, out):
    seed = config["seed"]
    stocks, psi = synth_daily_panel(seed, config["n_stocks"], config["n_days"], tuple(config["psi_range"]),
                                    start=config["start_date"], generator=DailyGenerator(**config["generator"]))
    monthly = monthly_stock_returns(stocks)
    market = monthly.assign(w=monthly["cap"] * monthly["ret"]).groupby("month")[["w", "cap"]].sum()
    market = market["w"] / market["cap"]
    factors = synth_factor_panel(seed, market.index, market_returns=market)
    funds, truth = synth_fund_panel(seed, config["n_funds"], len(factors), factors,
                                    FundGenerator(**{k: tuple(v) if isinstance(v, list) else v
                                                     for k, v in config["fund_generator"].items()}))
    out.add("stocks.csv", stocks.to_csv_text())
    out.add("factors.csv", factors.to_csv_text())
    out.add("funds.csv", funds.to_csv_text())
    out.add("psi.csv", frame_to_csv_text(psi.reset_index()))
    out.add("fund_truth.csv", frame_to_csv_text(truth))
    return {"generator": config["generator"]}


def cmd_estimate_proxy(config, out):
    stocks = load_stock_csv(_input(config, "stocks", out.out_dir, "stocks.csv"))
    months = [pd.Period(m, freq="M") for m in config["months"]] if config["months"] else None
    r2 = estimate_proxy_er(stocks, months=months, min_obs=config["min_obs"],
                           window=config["window_months"], workers=config["workers"])
    out.add("proxy_er.csv", r2.to_csv_text())
    out.add("proxy_er_diagnostics.csv",
            frame_to_csv_text(r2.diagnostics, {"month": lambda col: col.dt.strftime("%Y-%m")}))
    status = r2.diagnostics["status"].value_counts().sort_index()
    return {"market_index_anchor": str(stocks.frame["date"].min().date()),
            "status_counts": {k: int(v) for k, v in status.items()}}


def cmd_build_uirp(config, out):
    stocks = load_stock_csv(_input(config, "stocks", out.out_dir, "stocks.csv"))
    r2 = load_r2_csv(_input(config, "proxy_er", out.out_dir, "proxy_er.csv"))
    series = build_uirp_series(stocks, r2)
    out.add("uirp.csv", series.to_csv_text())
    return {}


def cmd_evaluate(config, out):
    funds = load_fund_csv(_input(config, "funds", out.out_dir, "funds.csv"))
    factors = load_factor_csv(_input(config, "factors", out.out_dir, "factors.csv"))
    uirp = load_uirp_csv(_input(config, "uirp", out.out_dir, "uirp.csv"))
    flt = config["index_filter"]
    if flt == "exclude":
        funds = active_funds(funds)
    elif flt == "only":
        funds = index_funds(funds)
    elif flt != "none":
        raise ConfigError("index_filter must be one of exclude, only, none")
    if len(funds) == 0:
        raise UirpkitError("no funds left after the index filter")
    selectivity = selectivity_r2(funds, factors) if config["selectivity"] else None
    portfolios = standard_portfolios(funds, selectivity)
    report = performance_report(portfolios, factors, uirp, STANDARD_SPECS, uirp_excess=config["uirp_excess"],
                                min_months=config["min_months"])
    out.add("alphas.csv", report.to_csv_text())
    if selectivity is not None:
        out.add("selectivity.csv", selectivity.to_csv_text())
    fac = factors.indexed
    curves = cumulative_value({
        "all_funds": portfolios["all_funds"],
        "uirp": uirp.returns,
        "market": fac["mkt_excess"] + fac["rf"],
    })
    curves = curves.reset_index().rename(columns={"index": "month"})
    out.add("cumvalue.csv", frame_to_csv_text(curves, {"month": lambda col: col.dt.strftime("%Y-%m")}))
    return {"skipped": [f"{name} / {spec.reference.value} {spec.factor_label}: {why}"
                        for name, spec, why in report.skipped]}


COMMANDS = {
    "simulate-table1": cmd_simulate_table1,
    "synth": cmd_synth,
    "estimate-proxy": cmd_estimate_proxy,
    "build-uirp": cmd_build_uirp,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="uirpkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=[v.value for v in ProxyVariant])
        p.add_argument("--uirp-excess", action="store_const", const=True, default=None)
        p.add_argument("--workers", type=int)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "variant": args.variant, "uirp_excess": args.uirp_excess,
                 "workers": args.workers}
    try:
        config = resolve_config(args.command, args.config, overrides)
    except ConfigError as exc:
        print(f"uirpkit {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    out = StagedOutputs(args.out)
    try:
        extra = COMMANDS[args.command](config, out)
        out.add(f"run_meta_{args.command.replace('-', '_')}.json", _run_meta(args.command, config, extra))
        out.commit()
    except ConfigError as exc:
        print(f"uirpkit {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (UirpkitError, OSError, ValueError, ArithmeticError, KeyError) as exc:
        print(f"uirpkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
