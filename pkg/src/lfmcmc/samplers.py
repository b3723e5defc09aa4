"""MCMC drivers for likelihood-free inference.

Four samplers share the same proposal machinery, call accounting and chain
bookkeeping:

* ``kernel-marginal`` -- at every step, fresh simulation batches at both the
  current and proposed points are scored through a Gaussian similarity kernel
  of bandwidth epsilon, and the ratio of kernel averages drives a standard MH
  accept.
* ``kernel-pseudo-marginal`` -- same, but the current point's kernel average
  is carried over from when it was last estimated, which targets the
  epsilon-approximate posterior exactly at the cost of sticky mixing.
* ``asl`` -- adaptive synthetic likelihood: batches at both points feed a
  Gaussian statistic model; an ensemble of M acceptance probabilities (driven
  by the sampling distribution of the batch means) yields a median threshold
  and a decision-error estimate, and batches grow by delta_s at both points
  until the error drops below xi. Setting xi > 0.5 disables refinement and
  the step reduces to the fixed-S synthetic-likelihood MH step with a single
  point estimate.
* ``gps`` -- the Gaussian-process surrogate replaces per-step simulation:
  acceptance-probability ensembles are drawn from the surrogate's joint
  predictive at (current, proposed); when the decision error exceeds xi, one
  new training simulation is acquired at whichever of the two points is more
  uncertain, and the surrogate keeps every simulation for the rest of the run.

A chain is strictly sequential; simulation batches run on their own RNG
substreams so reruns with the same seed are bit-identical.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .acceptance import (
    AcceptanceRatioParts,
    alpha_from_parts,
    alphas_from_log_ratios,
    build_ensemble,
)
from .errors import ConfigError, SimulationFailureError, SimulatorDomainError
from .gp import GpSurrogate, sample_bivariate
from .mvn import mvn_logpdf_many
from .priors import IndependentPrior
from .rngs import RngStream, normal_draw
from .simulators import CallCounter, SimulatorSpec, get_simulator, simulate, simulate_batch
from .synthetic import estimate_moments, sample_mean_posterior, synthetic_loglik

SAMPLER_NAMES = ("kernel-marginal", "kernel-pseudo-marginal", "asl", "gps")

# Stream ids: 0 drives proposals, ensemble draws and the MH uniform; 1 seeds
# surrogate initialization; simulation batches take ids from 8 upward.
_MASTER_STREAM = 0
_INIT_STREAM = 1
_FIRST_SIM_STREAM = 8


@dataclass
class ProposalSpec:
    """Symmetric Gaussian random-walk proposal in sampling space."""

    kind: str                 # 'full-gaussian-random-walk' | 'single-coordinate-gaussian'
    stds: np.ndarray          # (D,)

    def __post_init__(self):
        self.stds = np.asarray(self.stds, dtype=float)
        if self.kind not in ("full-gaussian-random-walk", "single-coordinate-gaussian"):
            raise ConfigError(f"unknown proposal kind {self.kind!r}")
        if np.any(self.stds <= 0):
            raise ConfigError("proposal stds must be positive")

    def propose(self, theta: np.ndarray, rng: RngStream) -> np.ndarray:
        new = np.array(theta, dtype=float)
        if self.kind == "full-gaussian-random-walk":
            for d in range(new.shape[0]):
                new[d] = normal_draw(rng, new[d], self.stds[d])
        else:
            d = int(rng.gen.integers(new.shape[0]))
            new[d] = normal_draw(rng, new[d], self.stds[d])
        return new


@dataclass
class RunConfig:
    """Fully resolved settings for one chain."""

    sampler: str
    simulator: str
    prior: IndependentPrior
    proposal: ProposalSpec
    observed: np.ndarray
    init_theta: np.ndarray
    chain_length: int
    burn_in: int
    seed: int
    s0: int = 5
    delta_s: int = 10
    epsilon: float = 0.0
    xi: float = 0.05
    m_draws: int = 50
    error_grid_size: int = 201
    diagonal_covariance: bool = False
    simulator_options: dict = field(default_factory=dict)
    asl_step_sim_budget: int = 10_000
    gps_acquisition_budget: int = 50
    surrogate_admission_band: float = 20.0
    gps_fit_enabled: bool = True

    def validate(self, spec: SimulatorSpec):
        if self.sampler not in SAMPLER_NAMES:
            raise ConfigError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLER_NAMES}")
        if self.chain_length <= self.burn_in:
            raise ConfigError("chain_length must exceed burn_in")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        if self.prior.dim != spec.param_dim:
            raise ConfigError(f"prior has {self.prior.dim} components, simulator needs {spec.param_dim}")
        if self.proposal.stds.shape != (spec.param_dim,):
            raise ConfigError("proposal stds must match the parameter dimension")
        if np.asarray(self.init_theta).shape != (spec.param_dim,):
            raise ConfigError("init_theta must match the parameter dimension")
        if np.asarray(self.observed).shape != (spec.stat_dim,):
            raise ConfigError(f"observed statistics must have length {spec.stat_dim}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.sampler.startswith("kernel") and self.epsilon <= 0:
            raise ConfigError("kernel samplers need epsilon > 0")
        if not 0 < self.xi <= 1.0:
            raise ConfigError("xi must lie in (0, 1]; values above 0.5 disable refinement")
        if self.sampler == "asl" and self.s0 < 2:
            raise ConfigError("asl needs s0 >= 2 for covariance estimation")
        if self.sampler.startswith("kernel") and self.s0 < 1:
            raise ConfigError("kernel samplers need s0 >= 1")
        if self.sampler == "gps" and self.s0 < 1:
            raise ConfigError("gps needs s0 >= 1 initial prior simulations")
        if self.delta_s < 1:
            raise ConfigError("delta_s must be positive")
        if self.m_draws < 2:
            raise ConfigError("m_draws must be at least 2")
        if self.error_grid_size < 2:
            raise ConfigError("error_grid_size must be at least 2")
        if not np.all(np.isfinite(self.init_theta)):
            raise ConfigError("init_theta must be finite")


@dataclass(frozen=True)
class StepRecord:
    step: int
    accepted: bool
    tau: float
    error: float
    sim_calls: int
    theta: np.ndarray


@dataclass
class ChainResult:
    config: RunConfig
    thetas: np.ndarray              # (chain_length, D): state after each step
    records: list[StepRecord]
    counter: CallCounter
    setup_calls: int
    events: list[dict]
    wall_time_s: float
    surrogate: GpSurrogate | None = None

    @property
    def kept(self) -> np.ndarray:
        return self.thetas[self.config.burn_in:]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean([r.accepted for r in self.records]))


def gaussian_kernel_loglik(y: np.ndarray, batch: np.ndarray, epsilon: float) -> float:
    """Log of the batch-averaged Gaussian similarity kernel between y and simulations.

    Average of Normal(y; x_s, epsilon**2 * I) over the batch, in log space.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    j = y.shape[0]
    sq = np.sum((batch - y) ** 2, axis=1)
    logs = -0.5 * j * np.log(2.0 * np.pi * epsilon**2) - sq / (2.0 * epsilon**2)
    return float(logsumexp(logs) - np.log(batch.shape[0]))


class _ChainDriver:
    """Shared plumbing: streams, counters, events."""

    def __init__(self, cfg: RunConfig, spec: SimulatorSpec, counter: CallCounter):
        self.cfg = cfg
        self.spec = spec
        self.counter = counter
        self.master = RngStream(cfg.seed, _MASTER_STREAM)
        self._next_sim_stream = _FIRST_SIM_STREAM
        self.events: list[dict] = []
        self.step_index = -1  # -1 while setting up

    def sim_stream(self) -> RngStream:
        stream = RngStream(self.cfg.seed, self._next_sim_stream)
        self._next_sim_stream += 1
        return stream

    def log_event(self, kind: str, detail: str):
        self.events.append({"step": self.step_index, "kind": kind, "detail": detail})

    def batch(self, theta: np.ndarray, size: int) -> np.ndarray:
        return simulate_batch(self.spec, theta, size, self.sim_stream(), self.counter,
                              self.cfg.simulator_options)

    def prior_pair(self, theta, theta_prime):
        return self.cfg.prior.log_density(theta_prime), self.cfg.prior.log_density(theta)


class _KernelDriver(_ChainDriver):
    def __init__(self, cfg, spec, counter, marginal: bool):
        super().__init__(cfg, spec, counter)
        self.marginal = marginal
        self.cached_loglik: float | None = None

    def setup(self, theta: np.ndarray):
        if not self.marginal:
            batch = self.batch(theta, self.cfg.s0)
            self.cached_loglik = gaussian_kernel_loglik(self.cfg.observed, batch, self.cfg.epsilon)

    def step(self, theta: np.ndarray) -> tuple[np.ndarray, bool, float, float]:
        cfg = self.cfg
        theta_prime = cfg.proposal.propose(theta, self.master)
        lp_prime, lp_cur = self.prior_pair(theta, theta_prime)
        if not np.isfinite(lp_prime):
            return theta, False, 0.0, 0.0
        try:
            batch_prime = self.batch(theta_prime, cfg.s0)
            ll_prime = gaussian_kernel_loglik(cfg.observed, batch_prime, cfg.epsilon)
        except (SimulationFailureError, SimulatorDomainError) as exc:
            self.log_event("simulation-failure", f"proposal rejected: {exc}")
            return theta, False, 0.0, 0.0
        if self.marginal:
            try:
                batch_cur = self.batch(theta, cfg.s0)
                ll_cur = gaussian_kernel_loglik(cfg.observed, batch_cur, cfg.epsilon)
            except (SimulationFailureError, SimulatorDomainError) as exc:
                self.log_event("simulation-failure", f"current-state batch failed: {exc}")
                return theta, False, 0.0, 0.0
        else:
            ll_cur = self.cached_loglik
        alpha = alpha_from_parts(AcceptanceRatioParts(
            log_prior_ratio=lp_prime - lp_cur,
            log_proposal_ratio=0.0,
            log_lik_proposed=ll_prime,
            log_lik_current=ll_cur,
        ))
        u = self.master.uniform()
        accepted = u <= alpha
        if accepted and not self.marginal:
            self.cached_loglik = ll_prime
        return (theta_prime if accepted else theta), accepted, alpha, 0.0


class _AslDriver(_ChainDriver):
    def step(self, theta: np.ndarray) -> tuple[np.ndarray, bool, float, float]:
        cfg = self.cfg
        theta_prime = cfg.proposal.propose(theta, self.master)
        lp_prime, lp_cur = self.prior_pair(theta, theta_prime)
        if not np.isfinite(lp_prime):
            return theta, False, 0.0, 0.0
        try:
            if cfg.xi > 0.5:
                return self._fixed_s_step(theta, theta_prime, lp_prime, lp_cur)
            return self._adaptive_step(theta, theta_prime, lp_prime, lp_cur)
        except (SimulationFailureError, SimulatorDomainError) as exc:
            self.log_event("simulation-failure", f"proposal rejected: {exc}")
            return theta, False, 0.0, 0.0

    def _fixed_s_step(self, theta, theta_prime, lp_prime, lp_cur):
        # No refinement: score the observed statistics at the point moment
        # estimates and run a plain MH accept on that single ratio.
        cfg = self.cfg
        m_prime = estimate_moments(self.batch(theta_prime, cfg.s0), cfg.diagonal_covariance)
        m_cur = estimate_moments(self.batch(theta, cfg.s0), cfg.diagonal_covariance)
        alpha = alpha_from_parts(AcceptanceRatioParts(
            log_prior_ratio=lp_prime - lp_cur,
            log_proposal_ratio=0.0,
            log_lik_proposed=synthetic_loglik(cfg.observed, m_prime, cfg.epsilon),
            log_lik_current=synthetic_loglik(cfg.observed, m_cur, cfg.epsilon),
        ))
        u = self.master.uniform()
        accepted = u <= alpha
        return (theta_prime if accepted else theta), accepted, alpha, 0.0

    def _adaptive_step(self, theta, theta_prime, lp_prime, lp_cur):
        cfg = self.cfg
        y = cfg.observed
        eye = np.eye(y.shape[0])
        batch_prime = self.batch(theta_prime, cfg.s0)
        batch_cur = self.batch(theta, cfg.s0)
        while True:
            m_prime = estimate_moments(batch_prime, cfg.diagonal_covariance)
            m_cur = estimate_moments(batch_cur, cfg.diagonal_covariance)
            mean_draws_prime = sample_mean_posterior(m_prime, self.master, size=cfg.m_draws)
            mean_draws_cur = sample_mean_posterior(m_cur, self.master, size=cfg.m_draws)
            ll_prime = mvn_logpdf_many(mean_draws_prime, y, m_prime.sigma_hat + cfg.epsilon**2 * eye)
            ll_cur = mvn_logpdf_many(mean_draws_cur, y, m_cur.sigma_hat + cfg.epsilon**2 * eye)
            ensemble = build_ensemble(
                alphas_from_log_ratios((lp_prime - lp_cur) + ll_prime - ll_cur),
                grid_size=cfg.error_grid_size,
            )
            if ensemble.error < cfg.xi:
                break
            used = batch_prime.shape[0] + batch_cur.shape[0]
            if used + 2 * cfg.delta_s > cfg.asl_step_sim_budget:
                self.log_event("budget-breach",
                               f"asl step used {used} simulations with error {ensemble.error:.4f}")
                break
            batch_prime = np.vstack([batch_prime, self.batch(theta_prime, cfg.delta_s)])
            batch_cur = np.vstack([batch_cur, self.batch(theta, cfg.delta_s)])
        u = self.master.uniform()
        accepted = u <= ensemble.tau
        return (theta_prime if accepted else theta), accepted, ensemble.tau, ensemble.error


class _GpsDriver(_ChainDriver):
    def __init__(self, cfg, spec, counter):
        super().__init__(cfg, spec, counter)
        self.surrogate = GpSurrogate(spec.param_dim, spec.stat_dim)
        self._acquired = 0
        self._refit_pending = False
        scale = np.maximum(np.abs(np.asarray(cfg.observed, dtype=float)), 1.0)
        self._admission_width = cfg.surrogate_admission_band * scale

    def admissible(self, stats: np.ndarray) -> bool:
        """Whether a simulation outcome is usable as surrogate training data.

        Statistics astronomically far from the observed values carry no
        information for any acceptance decision but wreck a homoskedastic GP
        fit, so they are excluded from training (the run still counts and
        logs them). The band is a configurable multiple of each observed
        statistic's magnitude; non-finite band disables the check.
        """
        if not np.all(np.isfinite(self._admission_width)):
            return True
        return bool(np.all(np.abs(stats - self.cfg.observed) <= self._admission_width))

    def _fit_steps(self) -> int:
        n = self.surrogate.n_train
        if n <= 300:
            return 20
        if n <= 800:
            return 10
        return 5

    def _maybe_refit(self):
        """Mark a refit due per the insertion schedule; fits run once per MH step."""
        if not self.cfg.gps_fit_enabled or self.surrogate.n_train < 2:
            return
        n = self.surrogate.n_train
        if self._acquired <= 50 and n <= 300:
            self._refit_pending = True
        elif n <= 600 and self._acquired % 10 == 0:
            self._refit_pending = True
        elif self._acquired % 50 == 0:
            self._refit_pending = True

    def _consume_refit(self):
        if self._refit_pending:
            self._refit_pending = False
            self.surrogate.fit_hyperparams(self._fit_steps())

    def setup(self, _theta: np.ndarray):
        cfg = self.cfg
        init_rng = RngStream(cfg.seed, _INIT_STREAM)
        for _ in range(cfg.s0):
            draw = cfg.prior.sample(init_rng)
            try:
                stats = simulate(self.spec, draw, self.sim_stream(), self.counter,
                                 cfg.simulator_options)
            except (SimulationFailureError, SimulatorDomainError) as exc:
                self.log_event("init-simulation-failure", str(exc))
                continue
            if self.admissible(stats):
                self.surrogate.insert_training_point(draw, stats)
            else:
                self.log_event("init-inadmissible", f"statistics {stats} outside training band")
        if cfg.gps_fit_enabled and self.surrogate.n_train >= 2:
            self.surrogate.init_data_driven_hyperparams()
            self.surrogate.fit_hyperparams(self._fit_steps())

    def _ensemble(self, theta, theta_prime, lp_prime, lp_cur):
        cfg = self.cfg
        log_ratios = np.full(cfg.m_draws, lp_prime - lp_cur)
        for j in range(self.spec.stat_dim):
            biv = self.surrogate.predict_bivariate(j, theta, theta_prime)
            draws = sample_bivariate(biv, self.master, size=cfg.m_draws)  # (M, 2)
            var = self.surrogate.hyperparams[j].noise_variance + cfg.epsilon**2
            var = max(var, 1e-12)
            y_j = cfg.observed[j]
            log_ratios += ((y_j - draws[:, 1]) ** 2 - (y_j - draws[:, 0]) ** 2) / (2.0 * var)
        return build_ensemble(alphas_from_log_ratios(log_ratios), grid_size=cfg.error_grid_size)

    def _acquire(self, theta, theta_prime) -> str:
        """Run one training simulation; returns 'inserted', 'reject' or 'stuck'.

        A failed or out-of-band simulation at the proposed point means its
        true likelihood is effectively zero, so the proposal is rejected
        outright; at the current point we retry the other candidate once and
        otherwise proceed with the ensemble we have.
        """
        first = self.surrogate.acquire_location(theta, theta_prime)
        second = theta if np.array_equal(first, theta_prime) else theta_prime
        for loc in (first, second):
            at_proposal = bool(np.array_equal(loc, theta_prime))
            try:
                stats = simulate(self.spec, loc, self.sim_stream(), self.counter,
                                 self.cfg.simulator_options)
            except (SimulationFailureError, SimulatorDomainError) as exc:
                self.log_event("acquisition-failure", str(exc))
                if at_proposal:
                    return "reject"
                continue
            if not self.admissible(stats):
                self.log_event("acquisition-inadmissible", f"statistics {stats} outside training band")
                if at_proposal:
                    return "reject"
                continue
            self.surrogate.insert_training_point(loc, stats)
            self._acquired += 1
            self._maybe_refit()
            return "inserted"
        return "stuck"

    def step(self, theta: np.ndarray) -> tuple[np.ndarray, bool, float, float]:
        cfg = self.cfg
        theta_prime = cfg.proposal.propose(theta, self.master)
        lp_prime, lp_cur = self.prior_pair(theta, theta_prime)
        if not np.isfinite(lp_prime):
            return theta, False, 0.0, 0.0
        acquisitions = 0
        fitted_this_step = False
        while True:
            if self._refit_pending and not fitted_this_step:
                self._consume_refit()
                fitted_this_step = True
            ensemble = self._ensemble(theta, theta_prime, lp_prime, lp_cur)
            if ensemble.error < cfg.xi:
                break
            if acquisitions >= cfg.gps_acquisition_budget:
                self.log_event("budget-breach",
                               f"gps step hit {acquisitions} acquisitions with error {ensemble.error:.4f}")
                break
            outcome = self._acquire(theta, theta_prime)
            if outcome == "inserted":
                acquisitions += 1
                continue
            if outcome == "reject":
                return theta, False, 0.0, ensemble.error
            break  # stuck: proceed with the current ensemble
        u = self.master.uniform()
        accepted = u <= ensemble.tau
        return (theta_prime if accepted else theta), accepted, ensemble.tau, ensemble.error


def _make_driver(cfg: RunConfig, spec: SimulatorSpec, counter: CallCounter) -> _ChainDriver:
    if cfg.sampler == "kernel-marginal":
        return _KernelDriver(cfg, spec, counter, marginal=True)
    if cfg.sampler == "kernel-pseudo-marginal":
        return _KernelDriver(cfg, spec, counter, marginal=False)
    if cfg.sampler == "asl":
        return _AslDriver(cfg, spec, counter)
    return _GpsDriver(cfg, spec, counter)


def run_chain(cfg: RunConfig) -> ChainResult:
    """Execute chain_length MH steps and collect per-step traces.

    The returned result holds every step; burn-in is discarded only when
    writing the samples file or summarizing.
    """
    spec = get_simulator(cfg.simulator)
    cfg.validate(spec)
    counter = CallCounter()
    driver = _make_driver(cfg, spec, counter)
    start = time.perf_counter()
    counter.begin_step()  # setup bucket
    if hasattr(driver, "setup"):
        driver.setup(np.asarray(cfg.init_theta, dtype=float))
    setup_calls = counter.per_step_calls[0]
    theta = np.asarray(cfg.init_theta, dtype=float).copy()
    thetas = np.empty((cfg.chain_length, spec.param_dim))
    records: list[StepRecord] = []
    for step in range(cfg.chain_length):
        driver.step_index = step
        counter.begin_step()
        theta, accepted, tau, error = driver.step(theta)
        thetas[step] = theta
        records.append(StepRecord(
            step=step,
            accepted=accepted,
            tau=tau,
            error=error,
            sim_calls=counter.per_step_calls[-1],
            theta=theta.copy(),
        ))
    wall = time.perf_counter() - start
    return ChainResult(
        config=cfg,
        thetas=thetas,
        records=records,
        counter=counter,
        setup_calls=setup_calls,
        events=driver.events,
        wall_time_s=wall,
        surrogate=getattr(driver, "surrogate", None),
    )


# ---------------------------------------------------------------------------
# Chain output files
# ---------------------------------------------------------------------------

def write_chain_csv(result: ChainResult, path):
    """Post-burn-in samples with per-step traces, 17-digit reproducible floats."""
    dim = result.thetas.shape[1]
    header = ["step", "accepted", "tau", "error", "sim_calls"] + [
        f"theta_{d + 1}" for d in range(dim)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in result.records[result.config.burn_in:]:
            writer.writerow(
                [rec.step, int(rec.accepted), f"{rec.tau:.17g}", f"{rec.error:.17g}", rec.sim_calls]
                + [f"{v:.17g}" for v in rec.theta]
            )


def config_as_dict(cfg: RunConfig) -> dict:
    prior_entries = []
    for comp in cfg.prior.components:
        entry = {"kind": "normal", "mean": comp.mean, "std": comp.std} if hasattr(comp, "std") \
            else {"kind": "gamma-exp", "shape": comp.shape, "rate": comp.rate}
        prior_entries.append(entry)
    return {
        "sampler": cfg.sampler,
        "simulator": cfg.simulator,
        "prior": prior_entries,
        "proposal": {"kind": cfg.proposal.kind, "stds": list(map(float, cfg.proposal.stds))},
        "observed": list(map(float, cfg.observed)),
        "init_theta": list(map(float, cfg.init_theta)),
        "chain_length": cfg.chain_length,
        "burn_in": cfg.burn_in,
        "seed": cfg.seed,
        "s0": cfg.s0,
        "delta_s": cfg.delta_s,
        "epsilon": cfg.epsilon,
        "xi": cfg.xi,
        "m_draws": cfg.m_draws,
        "error_grid_size": cfg.error_grid_size,
        "diagonal_covariance": cfg.diagonal_covariance,
        "simulator_options": cfg.simulator_options,
        "asl_step_sim_budget": cfg.asl_step_sim_budget,
        "gps_acquisition_budget": cfg.gps_acquisition_budget,
        "surrogate_admission_band": cfg.surrogate_admission_band,
        "gps_fit_enabled": cfg.gps_fit_enabled,
    }


def write_metadata_json(result: ChainResult, path, extra: dict | None = None):
    meta = {
        "config": config_as_dict(result.config),
        "seed": result.config.seed,
        "total_sim_calls": result.counter.total_calls,
        "setup_sim_calls": result.setup_calls,
        "acceptance_rate": result.acceptance_rate,
        "kept_samples": int(result.kept.shape[0]),
        "wall_time_s": result.wall_time_s,
        "events": result.events,
    }
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2)
