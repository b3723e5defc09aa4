"""Pluggable simulators with call accounting, plus the two built-in benchmarks.

Simulators map a parameter vector to a vector of summary statistics. Samplers
work in a (possibly log-transformed) sampling space; the per-dimension
``sampling_transform`` of a :class:`SimulatorSpec` says how to map sampling
space to the simulator's native space. Every completed simulator call is
counted, which is what makes simulation-cost comparisons between samplers
reproducible.

Built-ins:

* ``exp-toy`` -- one parameter (a rate, sampled in log space); the statistic
  is the mean of 500 exponential draws at that rate.
* ``blowfly`` -- six parameters (all sampled in log space) driving a delayed
  stochastic population recurrence; four statistics summarize the series.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SimulationFailureError, SimulatorDomainError
from .rngs import RngStream

DETERMINISTIC_NOISE_CUTOFF = 1e-8  # sigma below this makes gamma noise exactly 1


class CallCounter:
    """Thread-safe tally of simulator calls, with per-MH-step granularity."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total_calls = 0
        self.per_step_calls: list[int] = []

    def begin_step(self):
        with self._lock:
            self.per_step_calls.append(0)

    def add(self, n: int = 1):
        with self._lock:
            self.total_calls += n
            if self.per_step_calls:
                self.per_step_calls[-1] += n


@dataclass
class SimulatorSpec:
    """A registered simulator and its summary-statistic pipeline."""

    name: str
    param_dim: int
    stat_dim: int
    param_names: list[str]
    stat_names: list[str]
    sampling_transform: tuple[str, ...]  # 'identity' or 'log' per dimension
    simulate_one: Callable[[np.ndarray, RngStream, dict], np.ndarray]
    simulate_batch: Callable[[np.ndarray, int, RngStream, dict], np.ndarray] | None = None
    default_options: dict = field(default_factory=dict)

    def to_simulator_space(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.param_dim,):
            raise SimulatorDomainError(
                f"{self.name}: expected {self.param_dim} parameters, got shape {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise SimulatorDomainError(f"{self.name}: non-finite parameters {theta}")
        out = theta.copy()
        for d, kind in enumerate(self.sampling_transform):
            if kind == "log":
                out[d] = np.exp(theta[d])
        return out


_REGISTRY: dict[str, SimulatorSpec] = {}


def register_simulator(spec: SimulatorSpec, replace: bool = False):
    if spec.name in _REGISTRY and not replace:
        raise ValueError(f"simulator {spec.name!r} already registered")
    _REGISTRY[spec.name] = spec


def get_simulator(name: str) -> SimulatorSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown simulator {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None


def list_simulators() -> list[str]:
    return sorted(_REGISTRY)


def simulate(
    spec: SimulatorSpec,
    theta: np.ndarray,
    rng: RngStream,
    counter: CallCounter | None = None,
    options: dict | None = None,
) -> np.ndarray:
    """Run one simulation at a sampling-space parameter vector.

    Counts exactly one call. Non-finite output raises
    :class:`SimulationFailureError` after the call has been counted.
    """
    opts = {**spec.default_options, **(options or {})}
    params = spec.to_simulator_space(theta)
    stats = np.asarray(spec.simulate_one(params, rng, opts), dtype=float)
    if counter is not None:
        counter.add(1)
    if stats.shape != (spec.stat_dim,):
        raise SimulationFailureError(
            f"{spec.name}: expected {spec.stat_dim} statistics, got shape {stats.shape}"
        )
    if not np.all(np.isfinite(stats)):
        raise SimulationFailureError(f"{spec.name}: non-finite statistics {stats}")
    return stats


def simulate_batch(
    spec: SimulatorSpec,
    theta: np.ndarray,
    size: int,
    rng: RngStream,
    counter: CallCounter | None = None,
    options: dict | None = None,
) -> np.ndarray:
    """Run ``size`` independent simulations at one parameter point -> (size, J).

    Uses the simulator's vectorized path when it has one. Counts ``size``
    calls; any non-finite replicate fails the whole batch.
    """
    opts = {**spec.default_options, **(options or {})}
    params = spec.to_simulator_space(theta)
    if spec.simulate_batch is not None:
        stats = np.asarray(spec.simulate_batch(params, size, rng, opts), dtype=float)
    else:
        stats = np.stack([np.asarray(spec.simulate_one(params, rng, opts), dtype=float) for _ in range(size)])
    if counter is not None:
        counter.add(size)
    if stats.shape != (size, spec.stat_dim):
        raise SimulationFailureError(
            f"{spec.name}: expected batch shape {(size, spec.stat_dim)}, got {stats.shape}"
        )
    if not np.all(np.isfinite(stats)):
        raise SimulationFailureError(f"{spec.name}: non-finite statistics in batch")
    return stats


# ---------------------------------------------------------------------------
# Exponential toy: statistic = mean of n_draws exponential draws at rate theta.
# ---------------------------------------------------------------------------

def _exp_toy_one(params: np.ndarray, rng: RngStream, opts: dict) -> np.ndarray:
    rate = params[0]
    if rate <= 0:
        raise SimulatorDomainError(f"exp-toy: rate must be positive, got {rate}")
    n = int(opts["n_draws"])
    return np.array([rng.gen.exponential(1.0 / rate, n).mean()])


def _exp_toy_batch(params: np.ndarray, size: int, rng: RngStream, opts: dict) -> np.ndarray:
    rate = params[0]
    if rate <= 0:
        raise SimulatorDomainError(f"exp-toy: rate must be positive, got {rate}")
    n = int(opts["n_draws"])
    return rng.gen.exponential(1.0 / rate, (size, n)).mean(axis=1, keepdims=True)


def exponential_toy_observe(rng: RngStream, theta_star: float = 0.1, n_draws: int = 500) -> np.ndarray:
    """Generate the observed statistic: the mean of ``n_draws`` draws at the true rate."""
    if theta_star <= 0:
        raise ValueError("theta_star must be positive")
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    return np.array([rng.gen.exponential(1.0 / theta_star, n_draws).mean()])


# ---------------------------------------------------------------------------
# Blowfly population dynamics.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlowflyParams:
    """Simulator-space parameters of the blowfly recurrence, all positive.

    ``tau`` is sampled continuously and rounded to an integer lag >= 1 only
    inside the simulator.
    """

    p: float        # reproduction rate
    delta: float    # adult death rate
    n0: float       # population scale
    sigma_d: float  # death-noise scale
    sigma_p: float  # reproduction-noise scale
    tau: float      # delay

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise SimulatorDomainError(f"blowfly: {name} must be positive, got {value}")

    @property
    def lag(self) -> int:
        return max(1, int(round(self.tau)))


def _gamma_noise_matrix(sigma: float, shape: tuple[int, ...], rng: RngStream) -> np.ndarray:
    """Unit-mean gamma noise e ~ Gamma(1/sigma^2, 1/sigma^2); exactly 1 as sigma -> 0."""
    if sigma < DETERMINISTIC_NOISE_CUTOFF:
        return np.ones(shape)
    inv = 1.0 / sigma**2
    return rng.gen.standard_gamma(inv, shape) / inv


def blowfly_series(
    params: BlowflyParams,
    length: int,
    burn_in: int,
    rng: RngStream,
    n_series: int = 1,
    initial_value: float = 180.0,
) -> np.ndarray:
    """Simulate the delayed blowfly recurrence -> (length,) or (n_series, length).

    Each step adds delayed reproduction p * N[t-L] * exp(-N[t-L]/n0) * e_t and
    survivors N[t] * exp(-delta * eps_t), both with unit-mean gamma noise. The
    survival exponent is negative so that delta acts as a death rate. The
    first burn_in values are discarded; everything returned is non-negative.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    total = length + burn_in
    lag = params.lag
    if lag >= total:
        raise SimulatorDomainError(f"blowfly: lag {lag} must be below length + burn_in = {total}")
    series = np.empty((total, n_series))
    series[: lag + 1, :] = initial_value
    repro_noise = _gamma_noise_matrix(params.sigma_p, (total, n_series), rng)
    death_noise = _gamma_noise_matrix(params.sigma_d, (total, n_series), rng)
    for t in range(lag, total - 1):
        delayed = series[t - lag]
        series[t + 1] = (
            params.p * delayed * np.exp(-delayed / params.n0) * repro_noise[t]
            + series[t] * np.exp(-params.delta * death_noise[t])
        )
    out = series[burn_in:, :].T
    if not np.all(np.isfinite(out)):
        raise SimulationFailureError("blowfly: series overflowed to non-finite values")
    return out[0] if n_series == 1 else out


def blowfly_stats(
    series: np.ndarray,
    peak_threshold_factor: float = 1.5,
    peak_sharpness: float = 10.0,
) -> np.ndarray:
    """Four summary statistics of a population series.

    [mean, mean - median, smooth peak score, log(max + 1)]. The peak score
    sums, over interior local maxima (strict rise then no increase), a
    logistic weight of how far the peak sits above ``peak_threshold_factor``
    times the series mean, scaled by the mean so the statistic is insensitive
    to the overall population level.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1 or series.size == 0:
        raise ValueError("series must be a non-empty vector")
    if not np.all(np.isfinite(series)):
        raise ValueError("series contains non-finite values")
    mean = float(series.mean())
    median = float(np.median(series))
    scale = mean if mean > 0 else 1.0
    interior = series[1:-1]
    is_peak = (series[:-2] < interior) & (interior >= series[2:])
    peak_heights = interior[is_peak]
    z = (peak_heights - peak_threshold_factor * mean) / scale
    peak_score = float(np.sum(1.0 / (1.0 + np.exp(-peak_sharpness * z))))
    log_max = float(np.log(series.max() + 1.0))
    return np.array([mean, mean - median, peak_score, log_max])


def _blowfly_params_from_array(params: np.ndarray) -> BlowflyParams:
    return BlowflyParams(
        p=params[0], delta=params[1], n0=params[2],
        sigma_d=params[3], sigma_p=params[4], tau=params[5],
    )


def _blowfly_one(params: np.ndarray, rng: RngStream, opts: dict) -> np.ndarray:
    bp = _blowfly_params_from_array(params)
    series = blowfly_series(bp, int(opts["length"]), int(opts["burn_in"]), rng,
                            initial_value=float(opts["initial_value"]))
    return blowfly_stats(series, float(opts["peak_threshold_factor"]), float(opts["peak_sharpness"]))


def _blowfly_batch(params: np.ndarray, size: int, rng: RngStream, opts: dict) -> np.ndarray:
    bp = _blowfly_params_from_array(params)
    series = blowfly_series(bp, int(opts["length"]), int(opts["burn_in"]), rng,
                            n_series=size, initial_value=float(opts["initial_value"]))
    series = np.atleast_2d(series)
    return np.stack([
        blowfly_stats(row, float(opts["peak_threshold_factor"]), float(opts["peak_sharpness"]))
        for row in series
    ])


# Reference parameters for generating synthetic observed data: the prior means
# of the six log-space sampling parameters, exponentiated.
BLOWFLY_REFERENCE_PARAMS = BlowflyParams(
    p=float(np.exp(2.0)),
    delta=float(np.exp(-1.8)),
    n0=float(np.exp(6.0)),
    sigma_d=float(np.exp(-0.75)),
    sigma_p=float(np.exp(-0.5)),
    tau=float(np.exp(2.7)),
)


def generate_blowfly_observed(seed: int, options: dict | None = None) -> np.ndarray:
    """Synthetic observed blowfly statistics from the reference parameters."""
    spec = get_simulator("blowfly")
    opts = {**spec.default_options, **(options or {})}
    rng = RngStream(seed, stream_id=0)
    series = blowfly_series(
        BLOWFLY_REFERENCE_PARAMS, int(opts["length"]), int(opts["burn_in"]), rng,
        initial_value=float(opts["initial_value"]),
    )
    return blowfly_stats(series, float(opts["peak_threshold_factor"]), float(opts["peak_sharpness"]))


# ---------------------------------------------------------------------------
# Observed-statistics files: CSV with one header row of statistic names and
# one data row, written with 17 significant digits so values round-trip
# bit-exactly.
# ---------------------------------------------------------------------------

def write_observed_csv(path, values: np.ndarray, stat_names: list[str]):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if len(stat_names) != values.shape[0]:
        raise ValueError("statistic names and values disagree in length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(stat_names)
        writer.writerow([f"{v:.17g}" for v in values])


def read_observed_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        row = next(reader)
    return np.array([float(v) for v in row]), header


register_simulator(SimulatorSpec(
    name="exp-toy",
    param_dim=1,
    stat_dim=1,
    param_names=["rate"],
    stat_names=["mean_draw"],
    sampling_transform=("log",),
    simulate_one=_exp_toy_one,
    simulate_batch=_exp_toy_batch,
    default_options={"n_draws": 500},
))

register_simulator(SimulatorSpec(
    name="blowfly",
    param_dim=6,
    stat_dim=4,
    param_names=["p", "delta", "n0", "sigma_d", "sigma_p", "tau"],
    stat_names=["mean", "mean_minus_median", "peak_score", "log_max"],
    sampling_transform=("log",) * 6,
    simulate_one=_blowfly_one,
    simulate_batch=_blowfly_batch,
    default_options={
        "length": 1000,
        "burn_in": 500,
        "initial_value": 180.0,
        "peak_threshold_factor": 1.5,
        "peak_sharpness": 10.0,
    },
))
