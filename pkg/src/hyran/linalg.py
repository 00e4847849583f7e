"""Small dense symmetric positive-definite kernels.

Matrices here are tiny (d <= ~50), so call overhead dominates; the raw LAPACK
routines are several times cheaper than the scipy.linalg wrappers.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import lapack

from hyran.errors import FactorizationWarning, NumericError


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError("non-finite entries in linear system")


def spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive-definite ``A`` via Cholesky.

    If the factorization fails a least-squares solve is returned and a
    :class:`FactorizationWarning` is emitted; the failure is never silent.
    """
    _check_finite(A, b)
    chol, info = lapack.dpotrf(A, lower=1, clean=0)
    if info == 0:
        x, info = lapack.dpotrs(chol, b, lower=1)
        if info == 0:
            return x
    warnings.warn(
        f"Cholesky factorization failed (info={info}); falling back to least squares",
        FactorizationWarning,
        stacklevel=2,
    )
    return np.linalg.lstsq(A, b, rcond=None)[0]


def spd_cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``A``; raises :class:`NumericError` on failure."""
    _check_finite(A)
    chol, info = lapack.dpotrf(A, lower=1, clean=1)
    if info != 0:
        raise NumericError(f"Cholesky factorization failed (info={info})")
    return chol


def solve_lower_transposed(L: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Return ``x`` solving ``L^T x = z`` for lower-triangular ``L``."""
    x, info = lapack.dtrtrs(L, z, lower=1, trans=1)
    if info != 0:
        raise NumericError(f"triangular solve failed (info={info})")
    return x


def quad_form(A: np.ndarray, x: np.ndarray) -> float:
    """``x^T A x``."""
    return float(x @ A @ x)
