"""Randomized Metropolis-Hastings acceptance with an explicit error estimate.

When the log-likelihoods entering an MH ratio are themselves uncertain, a
Monte Carlo ensemble of M acceptance probabilities alpha^(1..M) describes the
induced distribution over the accept decision. The decision threshold tau is
the ensemble median, and the probability of making the wrong accept/reject
call, integrated over the uniform MH draw, equals the area under the
ensemble's CDF folded at tau -- the mean absolute deviation about the median.
Samplers keep refining (more simulations, or more surrogate training points)
until that error drops below a user threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AcceptanceRatioParts:
    """Log-space pieces of one MH acceptance ratio."""

    log_prior_ratio: float      # log pi(theta') - log pi(theta)
    log_proposal_ratio: float   # log q(theta | theta') - log q(theta' | theta)
    log_lik_proposed: float     # may be -inf for an impossible proposal
    log_lik_current: float


@dataclass(frozen=True)
class AcceptanceEnsemble:
    """M acceptance-probability draws plus the derived threshold and error."""

    alphas: np.ndarray  # (M,), each in [0, 1]
    tau: float          # lower median of alphas
    error: float        # unconditional decision error, in [0, 0.5]


def alpha_from_parts(parts: AcceptanceRatioParts) -> float:
    """min(1, exp(log ratio)), clamped before exponentiation so +inf ratios are 1."""
    terms = (
        parts.log_prior_ratio,
        parts.log_proposal_ratio,
        parts.log_lik_proposed,
        parts.log_lik_current,
    )
    if any(np.isnan(t) for t in terms):
        raise ValueError("acceptance ratio contains NaN")
    if parts.log_lik_proposed == -np.inf:
        return 0.0
    log_ratio = (
        parts.log_prior_ratio
        + parts.log_proposal_ratio
        + parts.log_lik_proposed
        - parts.log_lik_current
    )
    if log_ratio >= 0.0:
        return 1.0
    return float(np.exp(log_ratio))


def alphas_from_log_ratios(log_ratios: np.ndarray) -> np.ndarray:
    """Vectorized min(1, exp(.)) for an ensemble of log acceptance ratios."""
    log_ratios = np.asarray(log_ratios, dtype=float)
    if np.any(np.isnan(log_ratios)):
        raise ValueError("acceptance ratio contains NaN")
    return np.exp(np.minimum(log_ratios, 0.0))


def ensemble_median(alphas: np.ndarray) -> float:
    """Lower median: the (M+1)//2-th order statistic, always an attained value.

    Using an attained sample value keeps the folded-CDF identity for the
    error estimate exact on the empirical distribution, even for even M.
    """
    alphas = np.asarray(alphas, dtype=float)
    m = alphas.shape[0]
    if m == 0:
        raise ValueError("empty ensemble")
    return float(np.partition(alphas, (m - 1) // 2)[(m - 1) // 2])


def conditional_error(alphas: np.ndarray, u: float, tau: float) -> float:
    """Probability the decision at a fixed uniform draw u is wrong.

    If u <= tau we accept, and the error is the fraction of the ensemble
    strictly below u (the cases where we should have rejected); otherwise we
    reject and the error is the fraction at or above u.
    """
    alphas = np.asarray(alphas, dtype=float)
    if u <= tau:
        return float(np.mean(alphas < u))
    return float(np.mean(alphas >= u))


def unconditional_error(alphas: np.ndarray, tau: float, grid_size: int = 201) -> float:
    """Decision error integrated over u ~ Uniform(0, 1) by the midpoint rule.

    Equals the area under the ensemble CDF folded at tau, i.e. the mean
    absolute deviation of the ensemble about tau, up to grid resolution.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    alphas_sorted = np.sort(np.asarray(alphas, dtype=float))
    m = alphas_sorted.shape[0]
    u = (np.arange(grid_size) + 0.5) / grid_size
    below = np.searchsorted(alphas_sorted, u, side="left") / m  # fraction alpha < u
    cond = np.where(u <= tau, below, 1.0 - below)
    return float(np.mean(cond))


def build_ensemble(alphas: np.ndarray, grid_size: int = 201) -> AcceptanceEnsemble:
    """Bundle an alpha ensemble with its median threshold and error estimate."""
    alphas = np.asarray(alphas, dtype=float)
    tau = ensemble_median(alphas)
    err = unconditional_error(alphas, tau, grid_size=grid_size)
    return AcceptanceEnsemble(alphas=alphas, tau=tau, error=err)


def mh_decide(ensemble: AcceptanceEnsemble, u: float) -> bool:
    """Accept iff u <= tau (inclusive at the boundary)."""
    return u <= ensemble.tau
