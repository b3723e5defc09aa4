import numpy as np
import pytest

from lfmcmc.acceptance import (
    AcceptanceRatioParts,
    alpha_from_parts,
    build_ensemble,
    conditional_error,
    ensemble_median,
    mh_decide,
    unconditional_error,
)


def mad_about_tau(alphas, tau):
    """Closed-form oracle: the folded-CDF area equals the mean absolute deviation."""
    return float(np.mean(np.abs(np.asarray(alphas) - tau)))


def test_alpha_all_parts_zero():
    assert alpha_from_parts(AcceptanceRatioParts(0.0, 0.0, 0.0, 0.0)) == 1.0


def test_alpha_direct_exponentiation():
    parts = AcceptanceRatioParts(np.log(0.25), 0.0, 0.0, 0.0)
    assert alpha_from_parts(parts) == pytest.approx(0.25, abs=1e-15)


def test_alpha_large_ratio_clamps_without_overflow():
    parts = AcceptanceRatioParts(50.0, 0.0, 0.0, 0.0)
    assert alpha_from_parts(parts) == 1.0


def test_alpha_impossible_proposal():
    parts = AcceptanceRatioParts(0.0, 0.0, -np.inf, -1.0)
    assert alpha_from_parts(parts) == 0.0


def test_alpha_nan_rejected():
    with pytest.raises(ValueError):
        alpha_from_parts(AcceptanceRatioParts(np.nan, 0.0, 0.0, 0.0))


def test_lower_median_even_count():
    assert ensemble_median(np.array([0.1, 0.9, 0.4, 0.6])) == 0.4
    assert ensemble_median(np.array([0.3, 0.7])) == 0.3


def test_median_odd_count():
    assert ensemble_median(np.array([0.9, 0.1, 0.5])) == 0.5


def test_conditional_error_counts():
    alphas = np.array([0.2, 0.8])
    assert conditional_error(alphas, u=0.3, tau=0.5) == 0.5
    assert conditional_error(alphas, u=0.9, tau=0.5) == 0.0


def test_conditional_error_point_mass_boundary():
    alphas = np.full(10, 0.4)
    # u <= tau branch counts strictly below u
    assert conditional_error(alphas, u=0.4, tau=0.4) == 0.0


def test_unconditional_error_point_mass_is_zero():
    alphas = np.full(20, 0.7)
    assert unconditional_error(alphas, tau=0.7) == 0.0


def test_unconditional_error_two_point_example():
    err = unconditional_error(np.array([0.2, 0.8]), tau=0.5, grid_size=2001)
    assert err == pytest.approx(0.3, abs=2.0 / 2001)


def test_unconditional_error_matches_mad_oracle():
    rng = np.random.default_rng(0)
    grid = 201
    for _ in range(200):
        m = int(rng.integers(2, 120))
        alphas = rng.uniform(size=m)
        tau = ensemble_median(alphas)
        err = unconditional_error(alphas, tau, grid_size=grid)
        assert err == pytest.approx(mad_about_tau(alphas, tau), abs=2.0 / grid)


def test_unconditional_error_bounded_by_half():
    rng = np.random.default_rng(1)
    for _ in range(100):
        alphas = rng.uniform(size=int(rng.integers(2, 60)))
        tau = ensemble_median(alphas)
        assert 0.0 <= unconditional_error(alphas, tau) <= 0.5 + 1e-12


def test_median_minimizes_unconditional_error():
    rng = np.random.default_rng(2)
    ts = np.linspace(0, 1, 101)
    for _ in range(50):
        alphas = rng.uniform(size=int(rng.integers(3, 40)))
        tau = ensemble_median(alphas)
        errs = np.array([unconditional_error(alphas, t, grid_size=401) for t in ts])
        t_best = ts[np.argmin(errs)]
        err_at_median = unconditional_error(alphas, tau, grid_size=401)
        assert err_at_median <= errs.min() + 1.0 / 101


def test_monte_carlo_u_agrees_with_grid():
    rng = np.random.default_rng(3)
    alphas = rng.uniform(size=30)
    tau = ensemble_median(alphas)
    us = rng.uniform(size=10**5)
    sorted_a = np.sort(alphas)
    below = np.searchsorted(sorted_a, us, side="left") / 30
    cond = np.where(us <= tau, below, 1.0 - below)
    mc = cond.mean()
    se = cond.std(ddof=1) / np.sqrt(us.size)
    grid_val = unconditional_error(alphas, tau, grid_size=2001)
    assert abs(mc - grid_val) < 3 * se + 2.0 / 2001


def test_shift_bound():
    rng = np.random.default_rng(4)
    for _ in range(30):
        a, b = np.sort(rng.uniform(size=2))
        alphas = rng.uniform(a, b, size=25)
        tau = ensemble_median(alphas)
        assert unconditional_error(alphas, tau) <= (b - a) / 2 + 1e-9


def test_mh_decide_boundaries():
    ens1 = build_ensemble(np.full(5, 1.0))
    assert mh_decide(ens1, 0.999) and mh_decide(ens1, 0.0)
    ens0 = build_ensemble(np.full(5, 0.0))
    assert mh_decide(ens0, 0.0)          # u <= tau inclusive
    assert not mh_decide(ens0, 0.001)
    ens_half = build_ensemble(np.full(5, 0.5))
    assert mh_decide(ens_half, 0.5)
