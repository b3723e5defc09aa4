"""Multivariate normal primitives with a shared jitter policy.

Sample covariances built from a handful of simulations are routinely
near-singular, so every factorization here goes through
:func:`cholesky_with_ridge`: try the matrix as-is, then add jitter starting at
1e-9 times the mean diagonal, escalating tenfold up to 1e-3 times the mean
diagonal before giving up. Densities are always evaluated through the
triangular factor, never an explicit inverse.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalDegeneracyError
from .rngs import RngStream

LOG_2PI = float(np.log(2.0 * np.pi))

_RIDGE_START = 1e-9
_RIDGE_STOP = 1e-3


def cholesky_with_ridge(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``cov`` plus whatever jitter was needed.

    Returns
    -------
    (L, ridge) : the factor of ``cov + ridge * I``. ``ridge`` is 0.0 when the
    matrix factorizes cleanly.

    Raises
    ------
    NumericalDegeneracyError
        If the matrix still fails after the largest allowed jitter.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise NumericalDegeneracyError("covariance contains non-finite entries")
    scale = float(np.mean(np.diag(cov)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0  # zero matrices still deserve a ridge with an absolute scale
    eye = np.eye(cov.shape[0])
    ridge = 0.0
    while True:
        try:
            return np.linalg.cholesky(cov + ridge * eye), ridge
        except np.linalg.LinAlgError:
            ridge = _RIDGE_START * scale if ridge == 0.0 else ridge * 10.0
            if ridge > _RIDGE_STOP * scale * (1 + 1e-12):
                raise NumericalDegeneracyError(
                    f"covariance not positive definite after ridge {ridge / 10.0:g}",
                    attempted_ridge=ridge / 10.0,
                ) from None


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log-density of x under Normal(mean, cov), via Cholesky with the ridge policy."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    j = x.shape[0]
    if mean.shape[0] != j or cov.shape != (j, j):
        raise ValueError(f"dimension mismatch: x {x.shape}, mean {mean.shape}, cov {cov.shape}")
    chol, _ = cholesky_with_ridge(cov)
    z = solve_triangular(chol, x - mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return float(-0.5 * (j * LOG_2PI + logdet + z @ z))


def mvn_logpdf_many(xs: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log-densities of the rows of ``xs`` under one Normal(mean, cov).

    Factors the covariance once; used for scoring a whole ensemble of draws.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol, _ = cholesky_with_ridge(cov)
    z = solve_triangular(chol, (xs - mean).T, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (xs.shape[1] * LOG_2PI + logdet + np.sum(z * z, axis=0))


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """A matrix F with F @ F.T == cov for symmetric PSD cov.

    Uses an eigendecomposition with negative eigenvalues clipped to zero, so
    exactly singular covariances (zero matrices, rank-1 predictive
    covariances) produce draws that live exactly on their support instead of
    being blurred by jitter.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.all(np.isfinite(cov)):
        raise NumericalDegeneracyError("covariance contains non-finite entries")
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)


def sample_mvn(mean: np.ndarray, cov: np.ndarray, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw from Normal(mean, cov), PSD-tolerant. ``size=None`` gives one vector."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    factor = psd_factor(cov)
    n = 1 if size is None else int(size)
    z = rng.gen.standard_normal((n, mean.shape[0]))
    draws = mean + z @ factor.T
    return draws[0] if size is None else draws
