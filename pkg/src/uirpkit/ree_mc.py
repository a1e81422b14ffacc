"""Seeded Monte-Carlo checks of the closed-form equilibrium and the two-asset table driver.

Random numbers come from numpy's counter-based Philox generator.  Draws
are produced in fixed-size blocks and block ``k`` is seeded with
``SeedSequence(seed, spawn_key=(k,))``, so the output does not depend on how
many workers share the blocks.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from .exceptions import InsufficientData
from .regression import ols_fit
from .ree_core import (
    EconomyParams,
    ProxyVariant,
    asymmetry_ratio,
    equilibrium_price,
    expected_uninformed_holdings,
    informed_demand,
    proxy_weights,
    solve_equilibrium,
    uninformed_demand,
)

BLOCK_SIZE = 1 << 16
CLEARING_DRAWS = 10_000
CONDVAR_DRAWS = 1_000_000

#: Off-diagonal overrides of the four two-asset configurations.
CONFIGURATIONS = {
    "no_correlation": {"t12": 0.0, "u12": 0.0, "z12": 0.0},
    "info_corr": {"t12": 0.5, "u12": 0.0, "z12": 0.0},
    "residual_corr": {"t12": 0.0, "u12": 0.5, "z12": 0.0},
    "supply_corr": {"t12": 0.0, "u12": 0.0, "z12": 0.5},
}

#: Reference two-asset grid (z11 = 1..10, two decimals) keyed by block label.
REFERENCE_TABLE1 = {
    "no_correlation": {
        "asym_ratio": [1.00, 1.89, 2.68, 3.40, 4.05, 4.64, 5.17, 5.67, 6.12, 6.54],
        "weight_model": [1.00, 0.98, 0.96, 0.95, 0.93, 0.92, 0.91, 0.90, 0.89, 0.89],
        "weight_proxy": [1.00, 0.95, 0.91, 0.88, 0.85, 0.82, 0.79, 0.77, 0.75, 0.74],
    },
    "info_corr": {
        "asym_ratio": [1.00, 1.48, 1.81, 2.05, 2.24, 2.38, 2.50, 2.60, 2.68, 2.75],
        "weight_model": [1.00, 0.97, 0.95, 0.92, 0.91, 0.89, 0.88, 0.86, 0.85, 0.84],
        "weight_proxy": [1.00, 0.96, 0.94, 0.91, 0.89, 0.87, 0.85, 0.84, 0.82, 0.81],
    },
    "residual_corr": {
        "asym_ratio": [1.00, 1.86, 2.60, 3.25, 3.82, 4.33, 4.79, 5.20, 5.57, 5.91],
        "weight_model": [1.00, 0.98, 0.96, 0.95, 0.94, 0.93, 0.92, 0.91, 0.91, 0.90],
        "weight_proxy": [1.00, 0.95, 0.91, 0.88, 0.85, 0.83, 0.81, 0.79, 0.77, 0.75],
    },
    "supply_corr": {
        "asym_ratio": [1.00, 1.90, 2.71, 3.43, 4.08, 4.68, 5.22, 5.72, 6.17, 6.59],
        "weight_model": [1.00, 0.98, 0.96, 0.95, 0.93, 0.92, 0.91, 0.90, 0.89, 0.89],
        "weight_proxy": [1.00, 0.95, 0.91, 0.88, 0.85, 0.82, 0.79, 0.77, 0.75, 0.74],
    },
}

STATISTICS = ("asym_ratio", "weight_model", "weight_proxy")


class Conditioning(str, Enum):
    PRICE = "price"
    PRICE_AND_THETA = "price_and_theta"


@dataclass(frozen=True, eq=False)
class EconomyDraw:
    theta: np.ndarray
    eps: np.ndarray
    supply: np.ndarray
    price0: np.ndarray
    payoff1: np.ndarray


@dataclass(frozen=True, eq=False)
class EconomyDraws:
    """A batch of draws stored column-wise; each array has shape ``(count, n)``.

    Indexing returns a single :class:`EconomyDraw`, slicing returns a batch.
    """

    theta: np.ndarray
    eps: np.ndarray
    supply: np.ndarray
    price0: np.ndarray
    payoff1: np.ndarray
    seed: int = None

    def __len__(self):
        return self.theta.shape[0]

    def __getitem__(self, idx):
        parts = (self.theta[idx], self.eps[idx], self.supply[idx], self.price0[idx], self.payoff1[idx])
        if isinstance(idx, slice):
            return EconomyDraws(*parts, seed=self.seed)
        return EconomyDraw(*parts)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def returns(self):
        """Price-difference returns ``P1 - P0``."""
        return self.payoff1 - self.price0


def _block_rng(seed, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=(block,))
    return np.random.Generator(np.random.Philox(ss))


def _sample_block(params, sol, seed, block, size, chols):
    n = params.n_assets
    g = _block_rng(seed, block).standard_normal((size, 3 * n))
    lt, lu, lz = chols
    theta = params.mean_info + g[:, :n] @ lt.T
    eps = g[:, n:2 * n] @ lu.T
    supply = params.mean_supply + g[:, 2 * n:] @ lz.T
    price0 = equilibrium_price(sol, params, theta, supply)
    return theta, eps, supply, price0, theta + eps


def sample_draws(params, sol, seed, count, workers=1, block_size=BLOCK_SIZE):
    """Draw ``count`` independent realisations of (theta, eps, z) and their prices.

    Parameters
    ----------
    params : EconomyParams
    sol : EquilibriumSolution
        Used to price each draw.
    seed : int
        Master seed (64-bit).
    count : int
    workers : int
        Thread count; the result is identical for any value.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    chols = tuple(np.linalg.cholesky(m) for m in (params.info_cov, params.residual_cov, params.supply_cov))
    n_blocks = -(-count // block_size)
    sizes = [min(block_size, count - b * block_size) for b in range(n_blocks)]

    def run(b):
        return _sample_block(params, sol, seed, b, sizes[b], chols)

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, range(n_blocks)))
    else:
        blocks = [run(b) for b in range(n_blocks)]
    cols = [np.concatenate([blk[j] for blk in blocks]) for j in range(5)]
    return EconomyDraws(*cols, seed=int(seed))


def clearing_residuals(params, sol, draws):
    """Per-draw relative clearing error ``|lam X_I + (1-lam) X_UI - z|_inf / max(1, |z|_inf)``.

    Prices are recomputed from ``sol`` so that a perturbed solution is tested as such.
    """
    lam = params.informed_fraction
    price = equilibrium_price(sol, params, draws.theta, draws.supply)
    x_inf = informed_demand(params, draws.theta, price)
    x_uninf = uninformed_demand(sol, params, price)
    gap = lam * x_inf + (1 - lam) * x_uninf - draws.supply
    scale = np.maximum(1.0, np.abs(draws.supply).max(axis=1))
    return np.abs(gap).max(axis=1) / scale


def mc_market_clearing(params, sol, draws):
    if len(draws) == 0:
        raise ValueError("draws must be nonempty")
    return float(clearing_residuals(params, sol, draws).max())


def _residual_cov(design, responses):
    resid = np.column_stack([ols_fit(design, responses[:, j]).residuals for j in range(responses.shape[1])])
    dof = design.shape[0] - design.shape[1] - 1
    return resid.T @ resid / dof


def mc_conditional_variance(draws, conditioning=Conditioning.PRICE, min_draws=100_000):
    """Residual covariance of ``P1 - P0`` after projecting on the conditioning set.

    With Gaussian draws this estimates ``N + U`` when conditioning on prices
    and ``U`` when conditioning on prices and the signal.
    """
    conditioning = Conditioning(conditioning)
    if len(draws) < min_draws:
        raise InsufficientData(f"need at least {min_draws} draws, got {len(draws)}")
    if conditioning is Conditioning.PRICE:
        design = draws.price0
    else:
        design = np.hstack([draws.price0, draws.theta])
    return _residual_cov(design, draws.returns)


def mc_information_asymmetry(draws, min_draws=100_000):
    """Residual covariance of the signal given prices, an estimate of ``N``."""
    if len(draws) < min_draws:
        raise InsufficientData(f"need at least {min_draws} draws, got {len(draws)}")
    return _residual_cov(draws.price0, draws.theta)


@dataclass
class Table1Report:
    """Grid of two-asset statistics, one row per (configuration, z11)."""

    variant: ProxyVariant
    seed: int
    rows: list = field(default_factory=list)

    def to_frame(self):
        frame = pd.DataFrame(self.rows, columns=["config", "z11", *STATISTICS])
        frame["variant"] = ProxyVariant(self.variant).value
        frame["seed"] = self.seed
        return frame

    def series(self, config, statistic):
        return np.array([r[statistic] for r in self.rows if r["config"] == config])

    def configs(self):
        return list(dict.fromkeys(r["config"] for r in self.rows))


def configuration_params(base_params, z11, t12=0.0, u12=0.0, z12=0.0):
    return EconomyParams(
        risk_aversion=base_params.risk_aversion,
        informed_fraction=base_params.informed_fraction,
        info_cov=np.array([[1.0, t12], [t12, 1.0]]),
        residual_cov=np.array([[1.0, u12], [u12, 1.0]]),
        supply_cov=np.array([[float(z11), z12], [z12, 1.0]]),
        mean_info=base_params.mean_info,
        mean_supply=base_params.mean_supply,
    )


def table_statistics(params, variant=ProxyVariant.COND_U):
    """Asymmetry ratio and the two portfolio-weight ratios of stock 1 to stock 2."""
    sol = solve_equilibrium(params)
    holdings = expected_uninformed_holdings(sol, params)
    proxy = proxy_weights(sol, variant) * params.mean_supply
    return {
        "asym_ratio": asymmetry_ratio(sol),
        "weight_model": holdings[0] / holdings[1],
        "weight_proxy": proxy[0] / proxy[1],
    }


def table1_report(base_params=None, variant=ProxyVariant.COND_U, seed=0,
                  z11_values=range(1, 11), configurations=None):
    """Analytic two-asset grid; deterministic, ``seed`` is only recorded."""
    if base_params is None:
        base_params = EconomyParams.two_asset(1.0)
    if base_params.n_assets != 2:
        raise ValueError("the grid is defined for two-asset economies")
    configurations = CONFIGURATIONS if configurations is None else configurations
    report = Table1Report(variant=ProxyVariant(variant), seed=int(seed))
    for name, overrides in configurations.items():
        for z11 in z11_values:
            stats = table_statistics(configuration_params(base_params, z11, **overrides), variant)
            report.rows.append({"config": name, "z11": int(z11) if float(z11).is_integer() else z11, **stats})
    return report


def match_reference_blocks(report, tol=0.01, reference=None):
    """Map each computed configuration to the reference block it reproduces within ``tol``.

    A configuration maps to ``None`` when no reference block (or more than one) matches.
    """
    reference = REFERENCE_TABLE1 if reference is None else reference
    mapping = {}
    for config in report.configs():
        hits = []
        for label, block in reference.items():
            ok = all(
                np.all(np.abs(report.series(config, stat) - np.asarray(block[stat])) <= tol + 1e-12)
                for stat in STATISTICS
            )
            if ok:
                hits.append(label)
        mapping[config] = hits[0] if len(hits) == 1 else None
    return mapping


def mc_validation_report(base_params=None, seed=0, clearing_draws=CLEARING_DRAWS,
                         condvar_draws=CONDVAR_DRAWS, condvar_z11=(10,), configurations=None,
                         z11_values=range(1, 11), workers=1):
    """Monte-Carlo cross-checks of every grid cell, as a long table.

    Every cell gets a clearing check; the cells with ``z11`` in ``condvar_z11``
    also get conditional-variance and asymmetry-ratio estimates.
    """
    if base_params is None:
        base_params = EconomyParams.two_asset(1.0)
    configurations = CONFIGURATIONS if configurations is None else configurations
    records = []

    def add(config, z11, check, component, estimate, analytic, n_draws):
        rel = abs(estimate - analytic) / abs(analytic) if analytic not in (None, 0) else np.nan
        records.append({
            "config": config, "z11": z11, "check": check, "component": component,
            "estimate": estimate, "analytic": analytic, "rel_error": rel,
            "n_draws": n_draws, "seed": int(seed),
        })

    for name, overrides in configurations.items():
        for z11 in z11_values:
            params = configuration_params(base_params, z11, **overrides)
            sol = solve_equilibrium(params)
            draws = sample_draws(params, sol, seed, clearing_draws, workers=workers)
            add(name, z11, "clearing_residual", "max", mc_market_clearing(params, sol, draws), 0.0, clearing_draws)
            if condvar_draws and z11 in condvar_z11:
                big = sample_draws(params, sol, seed, condvar_draws, workers=workers)
                cv_p = mc_conditional_variance(big, Conditioning.PRICE, min_draws=0)
                cv_pt = mc_conditional_variance(big, Conditioning.PRICE_AND_THETA, min_draws=0)
                n_hat = mc_information_asymmetry(big, min_draws=0)
                target_p = sol.asymmetry + params.residual_cov
                for i in range(params.n_assets):
                    add(name, z11, "cond_var_price", f"{i + 1}{i + 1}", cv_p[i, i], target_p[i, i], condvar_draws)
                    add(name, z11, "cond_var_price_theta", f"{i + 1}{i + 1}", cv_pt[i, i],
                        params.residual_cov[i, i], condvar_draws)
                add(name, z11, "asym_ratio", "n11/n22", n_hat[0, 0] / n_hat[1, 1],
                    asymmetry_ratio(sol), condvar_draws)
    return pd.DataFrame.from_records(records)
