"""Closed-form multi-asset Grossman-Stiglitz equilibrium.

Informed investors (fraction ``lam``) observe the signal ``theta`` and the
price; uninformed investors observe only the price.  Payoffs are
``P1 = theta + eps`` and per-capita supply ``z`` is random, so the linear
equilibrium price

    P0 = A0 + A1 (theta - alpha U z),    alpha = a / lam

is only partially revealing.  Everything here is a pure function of
immutable inputs and works on single vectors or ``(m, n)`` stacks of draws.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import DimensionMismatch, InvalidParameters
from .validation import check_spd, check_vector, spd_inv, spd_solve, symmetrize


class ProxyVariant(str, Enum):
    """Which conditional variance is used as the numerator of ``1 - Proxy E(r)``.

    COND_U reproduces the reference two-asset grid and is the default.
    COND_N is Var(theta | P0); COND_N_PLUS_U is the Gaussian Var(P1 - P0 | P0).
    """

    COND_N = "cond_n"
    COND_N_PLUS_U = "cond_n_plus_u"
    COND_U = "cond_u"


@dataclass(frozen=True, eq=False)
class EconomyParams:
    """Exogenous parameters of the economy.

    Parameters
    ----------
    risk_aversion : float
        CARA coefficient ``a`` shared by all investors.
    informed_fraction : float
        Share ``lam`` of informed investors, in (0, 1].
    info_cov, residual_cov, supply_cov : ndarray (n, n)
        ``T = Var(theta)``, ``U = Var(eps)``, ``Z = Var(z)``; symmetric positive definite.
    mean_info : ndarray (n,), optional
        ``E(theta)``; zeros by default.
    mean_supply : ndarray (n,), optional
        ``E(z)``; ones by default.
    """

    risk_aversion: float
    informed_fraction: float
    info_cov: np.ndarray
    residual_cov: np.ndarray
    supply_cov: np.ndarray
    mean_info: np.ndarray = None
    mean_supply: np.ndarray = None

    def __post_init__(self):
        a = float(self.risk_aversion)
        lam = float(self.informed_fraction)
        if not a > 0:
            raise InvalidParameters(f"risk_aversion must be > 0, got {a}")
        if not 0 < lam <= 1:
            raise InvalidParameters(f"informed_fraction must lie in (0, 1], got {lam}")
        T = check_spd(self.info_cov, "info_cov")
        n = T.shape[0]
        U = check_spd(self.residual_cov, "residual_cov", n)
        Z = check_spd(self.supply_cov, "supply_cov", n)
        mt = np.zeros(n) if self.mean_info is None else check_vector(self.mean_info, "mean_info", n)
        mz = np.ones(n) if self.mean_supply is None else check_vector(self.mean_supply, "mean_supply", n)
        for name, value in [("risk_aversion", a), ("informed_fraction", lam), ("info_cov", T),
                            ("residual_cov", U), ("supply_cov", Z), ("mean_info", mt), ("mean_supply", mz)]:
            if isinstance(value, np.ndarray):
                value = value.copy()
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_assets(self):
        return self.info_cov.shape[0]

    @property
    def alpha_coef(self):
        return self.risk_aversion / self.informed_fraction

    @classmethod
    def two_asset(cls, z11, t12=0.0, u12=0.0, z12=0.0, risk_aversion=0.1, informed_fraction=0.4):
        """Two-asset economy with unit diagonals except the stock-1 supply variance ``z11``."""
        return cls(
            risk_aversion=risk_aversion,
            informed_fraction=informed_fraction,
            info_cov=np.array([[1.0, t12], [t12, 1.0]]),
            residual_cov=np.array([[1.0, u12], [u12, 1.0]]),
            supply_cov=np.array([[float(z11), z12], [z12, 1.0]]),
        )

    def to_dict(self):
        return {
            "risk_aversion": self.risk_aversion,
            "informed_fraction": self.informed_fraction,
            "info_cov": self.info_cov.tolist(),
            "residual_cov": self.residual_cov.tolist(),
            "supply_cov": self.supply_cov.tolist(),
            "mean_info": self.mean_info.tolist(),
            "mean_supply": self.mean_supply.tolist(),
        }


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    alpha_coef: float
    asymmetry: np.ndarray  # N = Var(theta | P0)
    avg_cov: np.ndarray  # Vm
    price_slope: np.ndarray  # A1
    price_intercept: np.ndarray  # A0
    total_return_cov: np.ndarray  # Var(P1 - P0)
    price_cov: np.ndarray  # Var(P0)
    price_return_cov: np.ndarray  # Cov(P0, P1 - P0)
    residual_cov: np.ndarray = field(default=None)  # U, kept for the proxy numerators


def solve_equilibrium(params):
    """Solve for the price coefficients and the implied second moments.

    All inversions go through a Cholesky factorization guarded by the
    condition-number ceiling in :mod:`uirpkit.validation`.
    """
    if not isinstance(params, EconomyParams):
        raise TypeError("params must be an EconomyParams")
    a, lam, alpha = params.risk_aversion, params.informed_fraction, params.alpha_coef
    T, U, Z = params.info_cov, params.residual_cov, params.supply_cov
    n = params.n_assets
    eye = np.eye(n)

    Ti = spd_inv(T, "info_cov")
    Ui = spd_inv(U, "residual_cov")
    Zi = spd_inv(Z, "supply_cov")
    N = spd_inv(symmetrize(Ti + alpha ** -2 * Ui @ Zi @ Ui), "posterior precision of theta")
    if lam == 1.0:
        Vm = U.copy()
    else:
        NUi = spd_inv(N + U, "N + U")
        Vm = spd_inv(symmetrize(lam * Ui + (1 - lam) * NUi), "average precision")

    # A1 = (T + U - Vm) T^-1, computed as the transpose of T^-1 (T + U - Vm)^T
    A1 = spd_solve(T, (T + U - Vm).T, "info_cov").T
    A0 = (eye - A1) @ params.mean_info + (alpha * A1 @ U - a * Vm) @ params.mean_supply

    signal_cov = T + alpha ** 2 * U @ Z @ U  # Var(theta - alpha U z)
    IA = eye - A1
    total = IA @ T @ IA.T + alpha ** 2 * A1 @ U @ Z @ U.T @ A1.T + U
    price_cov = A1 @ signal_cov @ A1.T
    price_return_cov = A1 @ T - price_cov

    return EquilibriumSolution(
        alpha_coef=alpha,
        asymmetry=symmetrize(N),
        avg_cov=symmetrize(Vm),
        price_slope=A1,
        price_intercept=A0,
        total_return_cov=symmetrize(total),
        price_cov=symmetrize(price_cov),
        price_return_cov=price_return_cov,
        residual_cov=U.copy(),
    )


def expected_uninformed_holdings(sol, params):
    """Unconditional expected uninformed portfolio, ``(I + lam U^-1 N)^-1 E(z)``.

    Solved as ``(U + lam N)^-1 U E(z)``, which keeps the system symmetric.
    """
    U, lam = params.residual_cov, params.informed_fraction
    return spd_solve(symmetrize(U + lam * sol.asymmetry), U @ params.mean_supply, "U + lam N")


def theoretical_proxy_er(sol, variant=ProxyVariant.COND_U):
    """Per-asset ``Proxy E(r) = 1 - numerator_ii / Var(P1 - P0)_ii``."""
    variant = ProxyVariant(variant)
    if variant is ProxyVariant.COND_N:
        num = np.diag(sol.asymmetry)
    elif variant is ProxyVariant.COND_N_PLUS_U:
        num = np.diag(sol.asymmetry + sol.residual_cov)
    else:
        num = np.diag(sol.residual_cov)
    den = np.diag(sol.total_return_cov)
    if np.any(den <= 0):
        raise InvalidParameters("total return variance must be positive on the diagonal")
    return 1.0 - num / den


def proxy_weights(sol, variant=ProxyVariant.COND_U):
    """The complementary weights ``1 - Proxy E(r)``."""
    return 1.0 - theoretical_proxy_er(sol, variant)


def _signal_mean(sol, params):
    return params.mean_info - sol.alpha_coef * params.residual_cov @ params.mean_supply


def mean_price(sol, params):
    """``E(P0) = A0 + A1 E(theta - alpha U z)``."""
    return sol.price_intercept + sol.price_slope @ _signal_mean(sol, params)


def equilibrium_price(sol, params, theta, z):
    n = params.n_assets
    theta = check_vector(theta, "theta", n, allow_batch=True)
    z = check_vector(z, "z", n, allow_batch=True)
    if theta.shape != z.shape:
        raise DimensionMismatch(f"theta {theta.shape} and z {z.shape} differ")
    signal = theta - sol.alpha_coef * z @ params.residual_cov.T
    return sol.price_intercept + signal @ sol.price_slope.T


def informed_demand(params, theta, price):
    n = params.n_assets
    theta = check_vector(theta, "theta", n, allow_batch=True)
    price = check_vector(price, "price", n, allow_batch=True)
    gap = theta - price
    return spd_solve(params.residual_cov, gap.T, "residual_cov").T / params.risk_aversion


def uninformed_expected_excess(sol, params, price):
    """``E_UI(P1 - P0 | P0 = price)`` by Gaussian projection on the price."""
    price = check_vector(price, "price", params.n_assets, allow_batch=True)
    dev = price - mean_price(sol, params)
    # Cov(P1, P0) = T A1^T
    cross = params.info_cov @ sol.price_slope.T
    proj = (cross @ spd_solve(sol.price_cov, dev.T, "price_cov")).T
    return params.mean_info + proj - price


def uninformed_demand(sol, params, price):
    """Uninformed optimal holdings ``a^-1 (N + U)^-1 E_UI(P1 - P0 | P0)``."""
    excess = uninformed_expected_excess(sol, params, price)
    cond_var = symmetrize(sol.asymmetry + params.residual_cov)
    return spd_solve(cond_var, excess.T, "N + U").T / params.risk_aversion


def asymmetry_ratio(sol, i=0, j=1):
    N = sol.asymmetry
    return N[i, i] / N[j, j]
