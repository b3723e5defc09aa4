"""Priors over the sampling space, as products of independent 1-D components.

Samplers usually move in log space, so priors are defined directly over the
sampling coordinates: a normal component is a normal on the (log) coordinate,
while a gamma-exp component places a Gamma(shape, rate) prior on the
exponentiated coordinate and includes the exp Jacobian in its log-density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError
from .rngs import RngStream, gamma_draw, normal_draw

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class NormalComponent:
    """Normal prior on one sampling-space coordinate."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigError(f"normal prior std must be positive, got {self.std}")

    def log_density(self, s: float) -> float:
        z = (s - self.mean) / self.std
        return -0.5 * (z * z + LOG_2PI) - np.log(self.std)

    def sample(self, rng: RngStream) -> float:
        return normal_draw(rng, self.mean, self.std)

    @property
    def prior_std(self) -> float:
        return self.std


@dataclass(frozen=True)
class GammaExpComponent:
    """Gamma(shape, rate) prior on exp(s), expressed over the sampling coordinate s.

    log p(s) = shape*log(rate) - lgamma(shape) + shape*s - rate*exp(s), which
    is the gamma density at exp(s) times the |d exp(s)/ds| Jacobian.
    """

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ConfigError("gamma prior shape and rate must be positive")

    def log_density(self, s: float) -> float:
        return float(
            self.shape * np.log(self.rate) - gammaln(self.shape) + self.shape * s - self.rate * np.exp(s)
        )

    def sample(self, rng: RngStream) -> float:
        return float(np.log(gamma_draw(rng, self.shape, self.rate)))

    @property
    def prior_std(self) -> float:
        # std of s = log X, X ~ Gamma(shape, rate): trigamma of the shape
        from scipy.special import polygamma

        return float(np.sqrt(polygamma(1, self.shape)))


@dataclass(frozen=True)
class IndependentPrior:
    """Product of independent 1-D components over the sampling space."""

    components: tuple

    @property
    def dim(self) -> int:
        return len(self.components)

    def log_density(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates, got shape {theta.shape}")
        return float(sum(c.log_density(theta[d]) for d, c in enumerate(self.components)))

    def sample(self, rng: RngStream) -> np.ndarray:
        return np.array([c.sample(rng) for c in self.components])

    def stds(self) -> np.ndarray:
        return np.array([c.prior_std for c in self.components])


def prior_from_config(entries: list[dict]) -> IndependentPrior:
    """Build a prior from manifest entries like {"kind": "normal", "mean": .., "std": ..}."""
    components = []
    for i, entry in enumerate(entries):
        kind = entry.get("kind")
        try:
            if kind == "normal":
                components.append(NormalComponent(float(entry["mean"]), float(entry["std"])))
            elif kind == "gamma-exp":
                components.append(GammaExpComponent(float(entry["shape"]), float(entry["rate"])))
            else:
                raise ConfigError(f"prior component {i}: unknown kind {kind!r}")
        except KeyError as exc:
            raise ConfigError(f"prior component {i}: missing field {exc}") from None
    if not components:
        raise ConfigError("prior must have at least one component")
    return IndependentPrior(components=tuple(components))


# Log-space priors for the six blowfly parameters, in simulator order
# (p, delta, n0, sigma_d, sigma_p, tau).
BLOWFLY_PRIOR_CONFIG = [
    {"kind": "normal", "mean": 2.0, "std": 2.0},
    {"kind": "normal", "mean": -1.8, "std": 0.4},
    {"kind": "normal", "mean": 6.0, "std": 0.5},
    {"kind": "normal", "mean": -0.75, "std": 1.0},
    {"kind": "normal", "mean": -0.5, "std": 1.0},
    {"kind": "normal", "mean": 2.7, "std": 0.1},
]
