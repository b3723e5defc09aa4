"""Moment estimation from simulation batches and the synthetic Gaussian likelihood.

A batch of S simulated statistic vectors at one parameter point is summarized
by its sample mean and unbiased sample covariance. The likelihood of the
observed statistics is then the Gaussian density at the estimated mean with
the estimated covariance widened by epsilon**2 on the diagonal, which is the
closed form of smoothing a Gaussian statistic model with an isotropic Gaussian
similarity kernel of bandwidth epsilon (epsilon = 0 is allowed and is the
default setting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamplesError
from .mvn import mvn_logpdf, mvn_logpdf_many, psd_factor
from .rngs import RngStream


@dataclass(frozen=True)
class MomentEstimate:
    """Sample mean, sample covariance and count for one simulation batch."""

    mu_hat: np.ndarray          # (J,)
    sigma_hat: np.ndarray       # (J, J), symmetric PSD
    count: int                  # S >= 2
    diagonal_only: bool = False

    @property
    def dim(self) -> int:
        return self.mu_hat.shape[0]


def estimate_moments(batch: np.ndarray, diagonal_only: bool = False) -> MomentEstimate:
    """First and second order statistics of a batch of statistic vectors.

    Parameters
    ----------
    batch : (S, J) array, S >= 2, all finite.
    diagonal_only : zero out off-diagonal covariance entries.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    s = batch.shape[0]
    if s < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {s}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch contains non-finite values")
    mu = batch.mean(axis=0)
    dev = batch - mu
    sigma = dev.T @ dev / (s - 1)
    if diagonal_only:
        sigma = np.diag(np.diag(sigma))
    return MomentEstimate(mu_hat=mu, sigma_hat=sigma, count=s, diagonal_only=diagonal_only)


def merge_moments(a: MomentEstimate, b: MomentEstimate) -> MomentEstimate:
    """Fold two batch estimates into the estimate of the concatenated batch.

    Uses the pairwise update for means and scatter matrices, so incrementally
    folding batches agrees with a single pass over all samples.
    """
    if a.diagonal_only != b.diagonal_only:
        raise ValueError("cannot merge estimates with different covariance modes")
    na, nb = a.count, b.count
    n = na + nb
    delta = b.mu_hat - a.mu_hat
    mu = a.mu_hat + delta * (nb / n)
    scatter = a.sigma_hat * (na - 1) + b.sigma_hat * (nb - 1)
    cross = np.outer(delta, delta) * (na * nb / n)
    if a.diagonal_only:
        cross = np.diag(np.diag(cross))
    sigma = (scatter + cross) / (n - 1)
    return MomentEstimate(mu_hat=mu, sigma_hat=sigma, count=n, diagonal_only=a.diagonal_only)


def synthetic_loglik(y: np.ndarray, moments: MomentEstimate, epsilon: float = 0.0) -> float:
    """Gaussian log-likelihood of observed statistics under a batch estimate.

    Evaluates Normal(y; mu_hat, sigma_hat + epsilon**2 * I); the covariance
    widening comes before the shared ridge policy kicks in.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    cov = moments.sigma_hat + epsilon**2 * np.eye(moments.dim)
    return mvn_logpdf(y, moments.mu_hat, cov)


def synthetic_loglik_many(ys: np.ndarray, moments: MomentEstimate, epsilon: float = 0.0) -> np.ndarray:
    """Vectorized :func:`synthetic_loglik` over rows of ``ys`` (shared covariance)."""
    cov = moments.sigma_hat + epsilon**2 * np.eye(moments.dim)
    return mvn_logpdf_many(ys, moments.mu_hat, cov)


def sample_mean_posterior(moments: MomentEstimate, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw plausible true means: Normal(mu_hat, sigma_hat / S).

    The variance of the batch mean is 1/S times the batch variance, so these
    draws quantify how much another batch of the same size could have moved
    the estimated mean. A zero covariance returns mu_hat exactly.
    """
    factor = psd_factor(moments.sigma_hat / moments.count)
    n = 1 if size is None else int(size)
    z = rng.gen.standard_normal((n, moments.dim))
    draws = moments.mu_hat + z @ factor.T
    return draws[0] if size is None else draws
