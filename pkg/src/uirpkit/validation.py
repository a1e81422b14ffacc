"""Input validation and guarded linear algebra helpers."""

import numpy as np
from scipy import linalg

from .exceptions import DimensionMismatch, InvalidParameters, NonInvertible

#: Largest 2-norm condition number accepted before an inversion is refused.
COND_CEILING = 1e12


def check_square(mat, name, n=None):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"{name} must be a square matrix, got shape {mat.shape}")
    if n is not None and mat.shape[0] != n:
        raise DimensionMismatch(f"{name} must be {n}x{n}, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InvalidParameters(f"{name} has non-finite entries")
    return mat


def check_spd(mat, name, n=None, rtol=1e-12):
    """Validate a symmetric positive-definite matrix and return it symmetrized."""
    mat = check_square(mat, name, n)
    scale = max(np.max(np.abs(mat)), np.finfo(float).tiny)
    if np.max(np.abs(mat - mat.T)) > rtol * scale:
        raise InvalidParameters(f"{name} is not symmetric")
    sym = 0.5 * (mat + mat.T)
    if np.linalg.eigvalsh(sym)[0] <= 0:
        raise InvalidParameters(f"{name} is not positive definite")
    return sym


def check_vector(vec, name, n=None, allow_batch=False):
    """Coerce to float array of length ``n``; with ``allow_batch`` a (m, n) stack is accepted."""
    vec = np.asarray(vec, dtype=float)
    ok_ndim = vec.ndim in ((1, 2) if allow_batch else (1,))
    if not ok_ndim or (n is not None and vec.shape[-1] != n):
        raise DimensionMismatch(f"{name} must have trailing length {n}, got shape {vec.shape}")
    return vec


def _guard(mat, name):
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > COND_CEILING:
        raise NonInvertible(f"{name} has condition number {cond:.3g} above {COND_CEILING:.0e}")


def spd_factor(mat, name="matrix"):
    """Cholesky factor of an SPD matrix after the condition-number guard."""
    mat = np.asarray(mat, dtype=float)
    _guard(mat, name)
    try:
        return linalg.cho_factor(0.5 * (mat + mat.T), lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NonInvertible(f"{name} is not positive definite") from exc


def spd_solve(mat, rhs, name="matrix"):
    """Solve ``mat @ x = rhs`` for SPD ``mat``; ``rhs`` may be a vector or matrix."""
    return linalg.cho_solve(spd_factor(mat, name), rhs, check_finite=False)


def spd_inv(mat, name="matrix"):
    mat = np.asarray(mat, dtype=float)
    inv = spd_solve(mat, np.eye(mat.shape[0]), name)
    return 0.5 * (inv + inv.T)


def symmetrize(mat):
    return 0.5 * (mat + mat.T)
