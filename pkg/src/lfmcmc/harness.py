"""Experiment harness: manifests, the analytic toy oracle, posterior
predictive sampling, chain summaries and comparisons.

A manifest is a versioned JSON document that fully determines a run: sampler
settings, prior, proposal, where the observed statistics come from (inline
values, a CSV file, or generation with a recorded seed), and where outputs
go. Running a manifest produces a samples CSV and a metadata JSON; summaries
and plot data (histograms, scatter subsamples) are derived from those files
only, so re-running any stage is deterministic.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from .errors import ConfigError, SimulationFailureError, SimulatorDomainError
from .priors import prior_from_config
from .rngs import RngStream
from .samplers import (
    ChainResult,
    ProposalSpec,
    RunConfig,
    run_chain,
    write_chain_csv,
    write_metadata_json,
)
from .simulators import (
    CallCounter,
    exponential_toy_observe,
    generate_blowfly_observed,
    get_simulator,
    read_observed_csv,
    simulate,
    write_observed_csv,
)

MANIFEST_VERSION = 1

# Stream id for generated observations; distinct from every sampler stream.
_OBSERVE_STREAM = 3


# ---------------------------------------------------------------------------
# Analytic oracle for the exponential toy
# ---------------------------------------------------------------------------

def analytic_exponential_posterior(alpha: float, beta: float, n: int, y_bar: float) -> tuple[float, float]:
    """Exact Gamma posterior (shape, rate) for exponential-rate data.

    A Gamma(alpha, beta) prior on the rate with n observed draws averaging
    y_bar is conjugate: the posterior is Gamma(alpha + n, beta + n * y_bar).
    n = 0 returns the prior.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("prior shape and rate must be positive")
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > 0 and y_bar <= 0:
        raise ValueError("y_bar must be positive when n > 0")
    return alpha + n, beta + n * y_bar


# ---------------------------------------------------------------------------
# Posterior predictive
# ---------------------------------------------------------------------------

def posterior_predictive(
    samples: np.ndarray,
    simulator: str,
    rng: RngStream,
    draws_per_sample: int = 1,
    thin: int = 1,
    counter: CallCounter | None = None,
    simulator_options: dict | None = None,
) -> tuple[np.ndarray, int]:
    """Simulate statistics at retained posterior samples -> (stats, n_failures).

    The Monte Carlo form of the predictive distribution of new statistics
    given the observed ones: every thinned posterior sample contributes
    ``draws_per_sample`` simulations; failed simulations are skipped and
    counted.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("need at least one posterior sample")
    if draws_per_sample < 1 or thin < 1:
        raise ValueError("draws_per_sample and thin must be positive")
    spec = get_simulator(simulator)
    collected = []
    failures = 0
    for theta in samples[::thin]:
        for _ in range(draws_per_sample):
            try:
                collected.append(simulate(spec, theta, rng, counter, simulator_options))
            except (SimulationFailureError, SimulatorDomainError):
                failures += 1
    if not collected:
        raise SimulationFailureError("all posterior-predictive simulations failed")
    return np.stack(collected), failures


# ---------------------------------------------------------------------------
# Chain files and summaries
# ---------------------------------------------------------------------------

def read_chain_csv(path) -> dict:
    """Parse a chain CSV into arrays; malformed rows report their line number."""
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty chain file") from None
        dim = sum(1 for h in header if h.startswith("theta_"))
        if dim == 0 or header[:5] != ["step", "accepted", "tau", "error", "sim_calls"]:
            raise ConfigError(f"{path}: unexpected chain header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigError(f"{path}: malformed value on line {lineno}") from None
            if len(row) != 5 + dim:
                raise ConfigError(f"{path}: wrong column count on line {lineno}")
    if not rows:
        raise ConfigError(f"{path}: chain file has no samples")
    data = np.asarray(rows)
    return {
        "step": data[:, 0].astype(int),
        "accepted": data[:, 1].astype(int),
        "tau": data[:, 2],
        "error": data[:, 3],
        "sim_calls": data[:, 4].astype(int),
        "thetas": data[:, 5:],
    }


def batch_means_ess(x: np.ndarray) -> float:
    """Effective sample size by the batch-means estimator, capped at n.

    Splits the series into about sqrt(n) batches; the ratio of the overall
    variance to the variance of batch means (scaled by batch count) estimates
    how many independent draws the series is worth. Zero-variance series
    report 1 by convention.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 4:
        return 1.0
    overall_var = float(np.var(x, ddof=1))
    if overall_var == 0.0:
        return 1.0
    batch_size = max(2, int(np.sqrt(n)))
    n_batches = n // batch_size
    trimmed = x[: n_batches * batch_size].reshape(n_batches, batch_size)
    means = trimmed.mean(axis=1)
    bm_var = float(np.var(means, ddof=1))
    if bm_var == 0.0:
        return float(n)
    ess = overall_var * n_batches / bm_var
    return float(min(max(ess, 1.0), n))


@dataclass
class PosteriorSummary:
    """Per-dimension posterior summary plus bookkeeping totals."""

    n_samples: int
    means: np.ndarray
    stds: np.ndarray
    quantiles: np.ndarray        # (5, D) rows: 5/25/50/75/95%
    ess: np.ndarray              # (D,)
    total_sim_calls: int
    acceptance_rate: float

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "means": list(map(float, self.means)),
            "stds": list(map(float, self.stds)),
            "quantiles": {
                q: list(map(float, self.quantiles[i]))
                for i, q in enumerate(("5%", "25%", "50%", "75%", "95%"))
            },
            "ess": list(map(float, self.ess)),
            "total_sim_calls": self.total_sim_calls,
            "acceptance_rate": self.acceptance_rate,
        }


def metadata_path_for(chain_path) -> str:
    base, _ = os.path.splitext(str(chain_path))
    return base + ".meta.json"


def summarize(chain_path, out_dir=None, histogram_bins: int = 50,
              scatter_max_rows: int = 2000) -> PosteriorSummary:
    """Summarize a chain file; optionally emit histogram and scatter data files.

    Total simulation calls come from the sibling metadata file when present
    (they include setup and burn-in); otherwise the per-step column is summed.
    """
    chain = read_chain_csv(chain_path)
    thetas = chain["thetas"]
    n, dim = thetas.shape
    means = thetas.mean(axis=0)
    stds = thetas.std(axis=0, ddof=1) if n > 1 else np.zeros(dim)
    quantiles = np.quantile(thetas, [0.05, 0.25, 0.50, 0.75, 0.95], axis=0)
    ess = np.array([batch_means_ess(thetas[:, d]) for d in range(dim)])
    meta_file = metadata_path_for(chain_path)
    if os.path.exists(meta_file):
        with open(meta_file) as fh:
            meta = json.load(fh)
        total_calls = int(meta["total_sim_calls"])
    else:
        total_calls = int(chain["sim_calls"].sum())
    summary = PosteriorSummary(
        n_samples=n,
        means=means,
        stds=stds,
        quantiles=quantiles,
        ess=ess,
        total_sim_calls=total_calls,
        acceptance_rate=float(chain["accepted"].mean()),
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_plot_data(thetas, out_dir, histogram_bins, scatter_max_rows)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2)
    return summary


def _write_plot_data(thetas: np.ndarray, out_dir, bins: int, scatter_max_rows: int):
    n, dim = thetas.shape
    for d in range(dim):
        counts, edges = np.histogram(thetas[:, d], bins=bins)
        path = os.path.join(out_dir, f"hist_theta_{d + 1}.csv")
        with open(path, "w") as fh:
            fh.write("bin_left,bin_right,count\n")
            for i in range(bins):
                fh.write(f"{edges[i]:.17g},{edges[i + 1]:.17g},{counts[i]}\n")
    stride = max(1, n // scatter_max_rows)
    sub = thetas[::stride][:scatter_max_rows]
    path = os.path.join(out_dir, "scatter.csv")
    with open(path, "w") as fh:
        fh.write(",".join(f"theta_{d + 1}" for d in range(dim)) + "\n")
        for row in sub:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def compare_chains(chain_a, chain_b) -> list[dict]:
    """Per-dimension mean/std deltas and two-sample KS statistics."""
    a = read_chain_csv(chain_a)["thetas"]
    b = read_chain_csv(chain_b)["thetas"]
    if a.shape[1] != b.shape[1]:
        raise ConfigError("chains have different parameter dimensions")
    out = []
    for d in range(a.shape[1]):
        ks = ks_2samp(a[:, d], b[:, d])
        out.append({
            "dimension": d + 1,
            "mean_a": float(a[:, d].mean()),
            "mean_b": float(b[:, d].mean()),
            "mean_delta": float(b[:, d].mean() - a[:, d].mean()),
            "std_a": float(a[:, d].std(ddof=1)),
            "std_b": float(b[:, d].std(ddof=1)),
            "std_delta": float(b[:, d].std(ddof=1) - a[:, d].std(ddof=1)),
            "ks_stat": float(ks.statistic),
            "ks_pvalue": float(ks.pvalue),
        })
    return out


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass
class ExperimentManifest:
    """Everything needed to run one experiment, parsed from JSON."""

    name: str
    raw: dict
    output_dir: str
    observed_source: dict
    analytic_oracle: bool = False

    @staticmethod
    def from_file(path) -> "ExperimentManifest":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return ExperimentManifest.from_dict(raw, default_name=os.path.basename(str(path)))

    @staticmethod
    def from_dict(raw: dict, default_name: str = "experiment") -> "ExperimentManifest":
        version = raw.get("manifest_version")
        if version != MANIFEST_VERSION:
            raise ConfigError(f"manifest_version must be {MANIFEST_VERSION}, got {version}")
        required = ("sampler", "simulator", "prior", "proposal", "init_theta",
                    "chain_length", "burn_in", "seed", "observed")
        missing = [k for k in required if k not in raw]
        if missing:
            raise ConfigError(f"manifest missing fields: {missing}")
        observed = raw["observed"]
        if not isinstance(observed, dict) or not any(k in observed for k in ("inline", "file", "generate")):
            raise ConfigError("observed must be one of {inline: [...]}, {file: path}, {generate: {...}}")
        if "file" in observed and not os.path.exists(observed["file"]):
            raise ConfigError(f"observed statistics file not found: {observed['file']}")
        return ExperimentManifest(
            name=raw.get("name", default_name),
            raw=raw,
            output_dir=raw.get("output_dir", "out"),
            observed_source=observed,
            analytic_oracle=bool(raw.get("analytic_oracle", False)),
        )


def resolve_observed(manifest: ExperimentManifest, seed: int) -> tuple[np.ndarray, dict]:
    """Materialize the observed statistics and a provenance record."""
    src = manifest.observed_source
    simulator = manifest.raw["simulator"]
    if "inline" in src:
        return np.asarray(src["inline"], dtype=float), {"source": "inline"}
    if "file" in src:
        values, names = read_observed_csv(src["file"])
        return values, {"source": "file", "path": str(src["file"]), "stat_names": names}
    gen = src["generate"]
    obs_seed = int(gen.get("seed", seed))
    if simulator == "exp-toy":
        rng = RngStream(obs_seed, _OBSERVE_STREAM)
        n_draws = int(gen.get("n_draws", manifest.raw.get("simulator_options", {}).get("n_draws", 500)))
        theta_star = float(gen.get("theta_star", 0.1))
        values = exponential_toy_observe(rng, theta_star=theta_star, n_draws=n_draws)
        prov = {"source": "generated", "seed": obs_seed, "theta_star": theta_star, "n_draws": n_draws}
        return values, prov
    if simulator == "blowfly":
        values = generate_blowfly_observed(obs_seed, manifest.raw.get("simulator_options"))
        return values, {"source": "generated", "seed": obs_seed, "reference": "prior-mean parameters"}
    raise ConfigError(f"observed generation not supported for simulator {simulator!r}")


def build_run_config(manifest: ExperimentManifest, seed_override: int | None = None) -> tuple[RunConfig, dict]:
    raw = manifest.raw
    seed = int(seed_override if seed_override is not None else raw["seed"])
    observed, provenance = resolve_observed(manifest, seed)
    prior = prior_from_config(raw["prior"])
    prop_raw = raw["proposal"]
    try:
        proposal = ProposalSpec(kind=prop_raw["kind"], stds=np.asarray(prop_raw["stds"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"proposal missing field {exc}") from None
    cfg = RunConfig(
        sampler=raw["sampler"],
        simulator=raw["simulator"],
        prior=prior,
        proposal=proposal,
        observed=observed,
        init_theta=np.asarray(raw["init_theta"], dtype=float),
        chain_length=int(raw["chain_length"]),
        burn_in=int(raw["burn_in"]),
        seed=seed,
        s0=int(raw.get("s0", 5)),
        delta_s=int(raw.get("delta_s", 10)),
        epsilon=float(raw.get("epsilon", 0.0)),
        xi=float(raw.get("xi", 0.05)),
        m_draws=int(raw.get("m_draws", 50)),
        error_grid_size=int(raw.get("error_grid_size", 201)),
        diagonal_covariance=bool(raw.get("diagonal_covariance", False)),
        simulator_options=dict(raw.get("simulator_options", {})),
        asl_step_sim_budget=int(raw.get("asl_step_sim_budget", 10_000)),
        gps_acquisition_budget=int(raw.get("gps_acquisition_budget", 50)),
        surrogate_admission_band=float(raw.get("surrogate_admission_band", 20.0)),
        gps_fit_enabled=bool(raw.get("gps_fit_enabled", True)),
    )
    cfg.validate(get_simulator(cfg.simulator))
    return cfg, provenance


@dataclass
class RunOutputs:
    name: str
    chain_file: str
    metadata_file: str
    observed_file: str
    result: ChainResult = field(repr=False)


def run_manifest(manifest: ExperimentManifest, seed_override: int | None = None,
                 out_dir: str | None = None) -> RunOutputs:
    """Run one manifest end to end and write its output files."""
    cfg, provenance = build_run_config(manifest, seed_override)
    result = run_chain(cfg)
    directory = out_dir or manifest.output_dir
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, manifest.name)
    chain_file = base + ".chain.csv"
    write_chain_csv(result, chain_file)
    observed_file = base + ".observed.csv"
    spec = get_simulator(cfg.simulator)
    write_observed_csv(observed_file, cfg.observed, spec.stat_names)
    meta_file = metadata_path_for(chain_file)
    extra = {"name": manifest.name, "observed_provenance": provenance}
    if manifest.analytic_oracle and cfg.simulator == "exp-toy":
        prior_entry = manifest.raw["prior"][0]
        if prior_entry.get("kind") == "gamma-exp":
            n_draws = int(cfg.simulator_options.get("n_draws", 500))
            shape, rate = analytic_exponential_posterior(
                float(prior_entry["shape"]), float(prior_entry["rate"]),
                n_draws, float(cfg.observed[0]),
            )
            extra["analytic_posterior"] = {
                "shape": shape, "rate": rate,
                "mean": shape / rate,
                "std": float(np.sqrt(shape) / rate),
            }
    write_metadata_json(result, meta_file, extra=extra)
    return RunOutputs(
        name=manifest.name,
        chain_file=chain_file,
        metadata_file=meta_file,
        observed_file=observed_file,
        result=result,
    )
