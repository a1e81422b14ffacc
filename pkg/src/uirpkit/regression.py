"""Ordinary least squares with an intercept, homoskedastic t-statistics and R^2."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .exceptions import InsufficientData, RankDeficient

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class OlsFit:
    intercept: float
    coefficients: np.ndarray
    t_stats: np.ndarray  # intercept first
    std_errors: np.ndarray  # intercept first
    r_squared: float
    n_obs: int
    dof: int
    residual_variance: float
    fitted: np.ndarray
    residuals: np.ndarray

    @property
    def params(self):
        return np.concatenate([[self.intercept], self.coefficients])


def _centered_qr(design):
    means = design.mean(axis=0)
    centered = design - means
    q, r, piv = linalg.qr(centered, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    # pivoted QR orders |R_jj| decreasingly, so the last entry reveals rank loss
    if diag[0] == 0 or diag[-1] <= RANK_RTOL * diag[0]:
        raise RankDeficient("regressors are collinear with each other or with the intercept")
    return means, q, r, piv


def ols_fit(design, response):
    """Fit ``response = b0 + design @ b + e`` by OLS.

    Parameters
    ----------
    design : array-like (n_obs, k)
        Regressors without the constant column; ``k`` may be zero.
    response : array-like (n_obs,)

    Returns
    -------
    OlsFit

    Raises
    ------
    InsufficientData
        Fewer than ``k + 2`` observations, or a constant response.
    RankDeficient
        A regressor is constant or a linear combination of the others.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"design {X.shape} and response {y.shape} are not aligned")
    n, k = X.shape
    if n < k + 2:
        raise InsufficientData(f"{n} observations cannot identify {k + 1} parameters with dof >= 1")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("design and response must be finite")

    y_mean = y.mean()
    yc = y - y_mean
    sst = float(yc @ yc)
    if sst == 0.0:
        raise InsufficientData("response has zero variance")

    if k:
        means, q, r, piv = _centered_qr(X)
        b_perm = linalg.solve_triangular(r, q.T @ yc)
        coef = np.empty(k)
        coef[piv] = b_perm
        # (Xc' Xc)^-1 = P R^-1 R^-T P'
        rinv = linalg.solve_triangular(r, np.eye(k))
        cov_perm = rinv @ rinv.T
        xtx_inv = np.empty((k, k))
        xtx_inv[np.ix_(piv, piv)] = cov_perm
        intercept = y_mean - means @ coef
        fitted = intercept + X @ coef
    else:
        means = np.zeros(0)
        coef = np.zeros(0)
        xtx_inv = np.zeros((0, 0))
        intercept = y_mean
        fitted = np.full(n, y_mean)

    resid = y - fitted
    ssr = float(resid @ resid)
    dof = n - k - 1
    s2 = ssr / dof
    var_b = s2 * np.diag(xtx_inv)
    var_a = s2 * (1.0 / n + means @ xtx_inv @ means)
    se = np.sqrt(np.concatenate([[var_a], var_b]))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.concatenate([[intercept], coef]) / se
    r2 = min(max(1.0 - ssr / sst, 0.0), 1.0)
    return OlsFit(
        intercept=float(intercept),
        coefficients=coef,
        t_stats=t,
        std_errors=se,
        r_squared=r2,
        n_obs=n,
        dof=dof,
        residual_variance=s2,
        fitted=fitted,
        residuals=resid,
    )


class OLSRegression(RegressorMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`ols_fit`.

    After ``fit`` exposes ``intercept_``, ``coef_``, ``tvalues_`` (intercept
    first), ``rsquared_``, ``dof_`` and ``fit_`` (the full :class:`OlsFit`).
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        res = ols_fit(X, y)
        self.fit_ = res
        self.intercept_ = res.intercept
        self.coef_ = res.coefficients
        self.tvalues_ = res.t_stats
        self.rsquared_ = res.r_squared
        self.dof_ = res.dof
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = validate_data(self, X, reset=False)
        return self.intercept_ + X @ self.coef_
