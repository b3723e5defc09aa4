import numpy as np
import pytest
from scipy import integrate

from lfmcmc.errors import InsufficientSamplesError
from lfmcmc.mvn import mvn_logpdf
from lfmcmc.rngs import RngStream
from lfmcmc.synthetic import (
    estimate_moments,
    merge_moments,
    sample_mean_posterior,
    synthetic_loglik,
)


def test_moments_hand_arithmetic():
    m = estimate_moments(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.allclose(m.mu_hat, [2.0, 3.0])
    assert np.allclose(m.sigma_hat, [[2.0, 2.0], [2.0, 2.0]])
    assert m.count == 2


def test_moments_identical_vectors_zero_covariance():
    m = estimate_moments(np.tile([1.0, -2.0], (5, 1)))
    assert np.all(m.sigma_hat == 0)


def test_moments_diagonal_only():
    m = estimate_moments(np.array([[1.0, 2.0], [3.0, 4.0]]), diagonal_only=True)
    assert np.allclose(m.sigma_hat, np.diag([2.0, 2.0]))
    assert m.sigma_hat[0, 1] == 0.0


def test_moments_require_two_samples():
    with pytest.raises(InsufficientSamplesError):
        estimate_moments(np.array([[1.0, 2.0]]))


def test_moments_permutation_invariant():
    rng = np.random.default_rng(0)
    batch = rng.normal(size=(30, 3))
    m1 = estimate_moments(batch)
    m2 = estimate_moments(batch[rng.permutation(30)])
    assert np.allclose(m1.mu_hat, m2.mu_hat, atol=1e-12)
    assert np.allclose(m1.sigma_hat, m2.sigma_hat, atol=1e-12)


def test_merge_equals_concatenated_batch():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(7, 2))
    b = rng.normal(size=(13, 2)) + 1.5
    merged = merge_moments(estimate_moments(a), estimate_moments(b))
    direct = estimate_moments(np.vstack([a, b]))
    assert np.allclose(merged.mu_hat, direct.mu_hat, rtol=1e-10)
    assert np.allclose(merged.sigma_hat, direct.sigma_hat, rtol=1e-10)
    assert merged.count == 20


def test_merge_three_way_associativity():
    rng = np.random.default_rng(2)
    parts = [rng.normal(size=(n, 3)) for n in (5, 9, 4)]
    incremental = estimate_moments(parts[0])
    for p in parts[1:]:
        incremental = merge_moments(incremental, estimate_moments(p))
    direct = estimate_moments(np.vstack(parts))
    assert np.allclose(incremental.sigma_hat, direct.sigma_hat, rtol=1e-10)


def test_loglik_zero_variance_unit_epsilon_at_mode():
    m = estimate_moments(np.zeros((4, 1)))
    assert synthetic_loglik(np.array([0.0]), m, epsilon=1.0) == pytest.approx(
        -0.5 * np.log(2 * np.pi), abs=1e-12
    )


def test_loglik_epsilon_zero_is_plain_density():
    rng = np.random.default_rng(3)
    batch = rng.normal(size=(40, 2))
    m = estimate_moments(batch)
    y = np.array([0.3, -0.2])
    assert synthetic_loglik(y, m, epsilon=0.0) == pytest.approx(
        mvn_logpdf(y, m.mu_hat, m.sigma_hat), abs=1e-12
    )


def _kernel_smoothed_loglik_quadrature(y, mu, cov, epsilon):
    """Oracle: numerically integrate kernel(y, x) * Normal(x; mu, cov) over x."""
    if np.ndim(mu) == 0 or len(np.atleast_1d(mu)) == 1:
        mu_s = float(np.atleast_1d(mu)[0])
        var = float(np.atleast_2d(cov)[0, 0])
        y_s = float(np.atleast_1d(y)[0])

        def integrand(x):
            kern = np.exp(-0.5 * (x - y_s) ** 2 / epsilon**2) / np.sqrt(2 * np.pi * epsilon**2)
            dens = np.exp(-0.5 * (x - mu_s) ** 2 / var) / np.sqrt(2 * np.pi * var)
            return kern * dens

        width = 8 * np.sqrt(var + epsilon**2)
        lo = min(y_s, mu_s) - width
        hi = max(y_s, mu_s) + width
        val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)
        return np.log(val)
    # two-dimensional case
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    y = np.asarray(y, dtype=float)
    cov_inv = np.linalg.inv(cov)
    norm = 1.0 / (2 * np.pi * np.sqrt(np.linalg.det(cov)))

    def integrand(x2, x1):
        x = np.array([x1, x2])
        kern = np.exp(-0.5 * np.sum((x - y) ** 2) / epsilon**2) / (2 * np.pi * epsilon**2)
        d = x - mu
        dens = norm * np.exp(-0.5 * d @ cov_inv @ d)
        return kern * dens

    widths = 7 * np.sqrt(np.diag(cov) + epsilon**2)
    los = np.minimum(y, mu) - widths
    his = np.maximum(y, mu) + widths
    val, _ = integrate.dblquad(integrand, los[0], his[0], los[1], his[1],
                               epsabs=1e-10, epsrel=1e-8)
    return np.log(val)


def test_quadrature_equivalence_one_dimensional():
    rng = np.random.default_rng(4)
    for _ in range(10):
        mu = rng.normal()
        var = rng.uniform(0.2, 3.0)
        eps = rng.uniform(0.1, 1.5)
        y = mu + rng.normal() * np.sqrt(var)
        batch = rng.normal(mu, np.sqrt(var), size=(400, 1))
        est = estimate_moments(batch)
        analytic = synthetic_loglik(np.array([y]), est, epsilon=eps)
        numeric = _kernel_smoothed_loglik_quadrature(y, est.mu_hat, est.sigma_hat, eps)
        assert analytic == pytest.approx(numeric, abs=1e-6)


def test_quadrature_equivalence_two_dimensional():
    rng = np.random.default_rng(5)
    for _ in range(3):
        a = rng.normal(size=(2, 2))
        cov = a @ a.T + 0.5 * np.eye(2)
        mu = rng.normal(size=2)
        eps = rng.uniform(0.3, 1.0)
        y = mu + rng.normal(size=2)
        batch = rng.multivariate_normal(mu, cov, size=500)
        est = estimate_moments(batch)
        analytic = synthetic_loglik(y, est, epsilon=eps)
        numeric = _kernel_smoothed_loglik_quadrature(y, est.mu_hat, est.sigma_hat, eps)
        assert analytic == pytest.approx(numeric, abs=1e-6)


def test_loglik_monotone_along_ray_from_mean():
    rng = np.random.default_rng(6)
    batch = rng.normal(size=(50, 2))
    m = estimate_moments(batch)
    direction = np.array([0.6, -0.8])
    values = [synthetic_loglik(m.mu_hat + t * direction, m) for t in np.linspace(0, 3, 12)]
    assert np.all(np.diff(values) <= 1e-12)


def test_loglik_at_mode_non_increasing_in_epsilon():
    rng = np.random.default_rng(7)
    batch = rng.normal(size=(50, 2))
    m = estimate_moments(batch)
    values = [synthetic_loglik(m.mu_hat, m, epsilon=e) for e in np.linspace(0, 2, 9)]
    assert np.all(np.diff(values) <= 1e-12)


def test_sample_mean_posterior_zero_variance_returns_mean():
    m = estimate_moments(np.tile([3.0, 4.0], (6, 1)))
    draw = sample_mean_posterior(m, RngStream(1, 0))
    assert np.all(draw == m.mu_hat)


def test_sample_mean_posterior_covariance_scales_with_count():
    rng = np.random.default_rng(8)
    batch = rng.normal(size=(25, 2)) @ np.array([[1.0, 0.4], [0.0, 0.7]])
    m = estimate_moments(batch)
    draws = sample_mean_posterior(m, RngStream(2, 0), size=100_000)
    emp = np.cov(draws.T)
    target = m.sigma_hat / m.count
    assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.03


def test_sample_mean_posterior_concentrates_at_large_count():
    rng = np.random.default_rng(9)
    batch = rng.normal(size=(10, 2))
    m = estimate_moments(batch)
    # emulate a very large count by rescaling
    big = type(m)(mu_hat=m.mu_hat, sigma_hat=m.sigma_hat, count=10**6, diagonal_only=False)
    draws = sample_mean_posterior(big, RngStream(3, 0), size=1000)
    bound = 6 * np.sqrt(np.max(np.diag(m.sigma_hat)) / 10**6)
    assert np.max(np.abs(draws - m.mu_hat)) <= bound
