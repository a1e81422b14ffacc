"""Noisy rational-expectations equilibrium engine and uninformed-investor reference portfolio pipeline."""

from .exceptions import (
    DimensionMismatch,
    EmptyMonth,
    EmptyPortfolio,
    InsufficientData,
    InvalidParameters,
    InvariantViolation,
    NonInvertible,
    ParseError,
    RankDeficient,
    SchemaError,
    UirpkitError,
)
from .ree_core import (
    EconomyParams,
    EquilibriumSolution,
    ProxyVariant,
    expected_uninformed_holdings,
    solve_equilibrium,
    theoretical_proxy_er,
)
from .regression import OLSRegression, OlsFit, ols_fit

__all__ = [
    "DimensionMismatch", "EmptyMonth", "EmptyPortfolio", "InsufficientData", "InvalidParameters",
    "InvariantViolation", "NonInvertible", "ParseError", "RankDeficient", "SchemaError", "UirpkitError",
    "EconomyParams", "EquilibriumSolution", "ProxyVariant", "expected_uninformed_holdings",
    "solve_equilibrium", "theoretical_proxy_er", "OLSRegression", "OlsFit", "ols_fit",
]
