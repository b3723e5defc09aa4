"""Per-statistic Gaussian-process surrogates over parameter space.

Each of the J summary statistics gets its own GP regressor with an ARD
squared-exponential kernel and a constant prior mean equal to the training
output mean for that statistic. All J GPs share one set of training inputs
(one simulation yields all J outputs). The surrogate accumulates every
simulation ever run and serves two queries the samplers need:

* the joint bivariate predictive of a statistic's latent mean at the current
  and proposed parameter points, including their correlation, and
* marginal predictive variances used to pick where the next simulation would
  be most informative.

Cholesky factors of K + noise * I are cached per statistic and extended by a
block row on each insertion; hyperparameter refits trigger a full rebuild.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalDegeneracyError
from .mvn import cholesky_with_ridge, psd_factor
from .rngs import RngStream

LOG_2PI = float(np.log(2.0 * np.pi))

_LOG_PARAM_MIN = -46.0
_LOG_PARAM_MAX = 46.0


@dataclass
class GpHyperparams:
    """ARD squared-exponential kernel settings for one statistic's GP."""

    signal_variance: float
    length_scales: np.ndarray  # (D,), all positive
    noise_variance: float

    def copy(self) -> "GpHyperparams":
        return GpHyperparams(self.signal_variance, self.length_scales.copy(), self.noise_variance)

    def to_log_vector(self) -> np.ndarray:
        return np.log(np.concatenate(([self.signal_variance], self.length_scales, [self.noise_variance])))

    @staticmethod
    def from_log_vector(phi: np.ndarray) -> "GpHyperparams":
        phi = np.clip(phi, _LOG_PARAM_MIN, _LOG_PARAM_MAX)
        vals = np.exp(phi)
        return GpHyperparams(float(vals[0]), vals[1:-1].copy(), float(vals[-1]))


@dataclass(frozen=True)
class BivariatePredictive:
    """Joint GP predictive for one statistic at (proposed, current) points."""

    means: np.ndarray  # (2,): [mean at theta_prime, mean at theta]
    cov: np.ndarray    # (2, 2) symmetric PSD


def _ard_cross(a: np.ndarray, b: np.ndarray, hp: GpHyperparams) -> np.ndarray:
    """Kernel matrix between rows of a (n,D) and b (m,D).

    Far-field entries (correlation below 1e-30) are flushed to exact zero:
    they carry no information, and subnormal operands put libm and LAPACK on
    assist paths orders of magnitude slower.
    """
    sa = a / hp.length_scales
    sb = b / hp.length_scales
    sq = np.sum(sa**2, axis=1)[:, None] + np.sum(sb**2, axis=1)[None, :] - 2.0 * sa @ sb.T
    k = hp.signal_variance * np.exp(-0.5 * np.minimum(np.maximum(sq, 0.0), 140.0))
    k[k < 1e-30 * hp.signal_variance] = 0.0
    return k


class GpSurrogate:
    """J independent GPs sharing N training inputs in D-dimensional space."""

    def __init__(self, param_dim: int, stat_dim: int,
                 hyperparams: list[GpHyperparams] | None = None,
                 noise_floor_rel: float = 1e-6):
        self.param_dim = param_dim
        self.stat_dim = stat_dim
        self.noise_floor_rel = noise_floor_rel
        self.inputs = np.empty((0, param_dim))
        self.outputs = np.empty((0, stat_dim))
        if hyperparams is None:
            hyperparams = [GpHyperparams(1.0, np.ones(param_dim), 0.1) for _ in range(stat_dim)]
        if len(hyperparams) != stat_dim:
            raise ValueError("need one hyperparameter set per statistic")
        self.hyperparams = hyperparams
        self._chols: list[np.ndarray | None] = [None] * stat_dim
        self._alphas: list[np.ndarray | None] = [None] * stat_dim
        self._means = np.zeros(stat_dim)
        self.insertion_count = 0
        self.fit_warnings: list[str] = []

    # ------------------------------------------------------------------
    # Training-set maintenance
    # ------------------------------------------------------------------

    @property
    def n_train(self) -> int:
        return self.inputs.shape[0]

    def _noise_floor(self, j: int) -> float:
        """Fit-time floor on the noise variance, relative to the output variance."""
        if self.n_train >= 2:
            out_var = float(np.var(self.outputs[:, j]))
        else:
            out_var = 0.0
        return max(self.noise_floor_rel * out_var, 1e-12)

    def _rebuild(self, j: int):
        n = self.n_train
        if n == 0:
            self._chols[j] = None
            self._alphas[j] = None
            self._means[j] = 0.0
            return
        hp = self.hyperparams[j]
        k = _ard_cross(self.inputs, self.inputs, hp) + hp.noise_variance * np.eye(n)
        chol, _ = cholesky_with_ridge(k)
        self._means[j] = float(self.outputs[:, j].mean())
        centered = self.outputs[:, j] - self._means[j]
        self._chols[j] = chol
        self._alphas[j] = cho_solve((chol, True), centered)

    def rebuild_all(self):
        for j in range(self.stat_dim):
            self._rebuild(j)

    def insert_training_point(self, theta: np.ndarray, x: np.ndarray):
        """Add one (parameters, statistics) pair and update all J caches.

        Extends each cached Cholesky factor by a block row; falls back to a
        full rebuild when the new row is numerically degenerate (for example
        a duplicated input with near-zero noise).
        """
        theta = np.asarray(theta, dtype=float).reshape(self.param_dim)
        x = np.asarray(x, dtype=float).reshape(self.stat_dim)
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(x))):
            raise ValueError("training point contains non-finite values")
        old_n = self.n_train
        old_inputs = self.inputs
        self.inputs = np.vstack([self.inputs, theta[None, :]])
        self.outputs = np.vstack([self.outputs, x[None, :]])
        self.insertion_count += 1
        for j in range(self.stat_dim):
            if old_n == 0 or self._chols[j] is None:
                self._rebuild(j)
                continue
            hp = self.hyperparams[j]
            noise = hp.noise_variance
            k_vec = _ard_cross(old_inputs, theta[None, :], hp)[:, 0]
            l_row = solve_triangular(self._chols[j], k_vec, lower=True)
            diag_sq = hp.signal_variance + noise - float(l_row @ l_row)
            if diag_sq <= 1e-12 * (hp.signal_variance + noise):
                self._rebuild(j)
                continue
            chol = np.zeros((old_n + 1, old_n + 1))
            chol[:old_n, :old_n] = self._chols[j]
            chol[old_n, :old_n] = l_row
            chol[old_n, old_n] = np.sqrt(diag_sq)
            self._chols[j] = chol
            self._means[j] = float(self.outputs[:, j].mean())
            centered = self.outputs[:, j] - self._means[j]
            self._alphas[j] = cho_solve((chol, True), centered)

    # ------------------------------------------------------------------
    # Prediction
    # ------------------------------------------------------------------

    def predict_bivariate(self, j: int, theta: np.ndarray, theta_prime: np.ndarray) -> BivariatePredictive:
        """Joint predictive of statistic j's latent mean at (theta_prime, theta)."""
        if not 0 <= j < self.stat_dim:
            raise IndexError(f"statistic index {j} out of range")
        hp = self.hyperparams[j]
        points = np.vstack([
            np.asarray(theta_prime, dtype=float).reshape(self.param_dim),
            np.asarray(theta, dtype=float).reshape(self.param_dim),
        ])
        k_star = _ard_cross(points, points, hp)
        if self.n_train == 0:
            return BivariatePredictive(means=np.zeros(2), cov=0.5 * (k_star + k_star.T))
        k_cross = _ard_cross(points, self.inputs, hp)
        means = self._means[j] + k_cross @ self._alphas[j]
        v = solve_triangular(self._chols[j], k_cross.T, lower=True)
        cov = k_star - v.T @ v
        cov = 0.5 * (cov + cov.T)
        return BivariatePredictive(means=means, cov=cov)

    def marginal_variances(self, points: np.ndarray) -> np.ndarray:
        """Predictive variance of each statistic's latent mean at each point -> (n, J)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((points.shape[0], self.stat_dim))
        for j in range(self.stat_dim):
            hp = self.hyperparams[j]
            if self.n_train == 0:
                out[:, j] = hp.signal_variance
                continue
            k_cross = _ard_cross(points, self.inputs, hp)
            v = solve_triangular(self._chols[j], k_cross.T, lower=True)
            out[:, j] = np.maximum(hp.signal_variance - np.sum(v * v, axis=0), 0.0)
        return out

    def acquire_location(self, theta: np.ndarray, theta_prime: np.ndarray) -> np.ndarray:
        """The candidate whose summed predictive variance is larger; ties go to theta_prime."""
        theta = np.asarray(theta, dtype=float)
        theta_prime = np.asarray(theta_prime, dtype=float)
        variances = self.marginal_variances(np.vstack([theta, theta_prime])).sum(axis=1)
        return theta.copy() if variances[0] > variances[1] else theta_prime.copy()

    # ------------------------------------------------------------------
    # Hyperparameter fitting: gradient ascent on the log marginal likelihood
    # ------------------------------------------------------------------

    def log_marginal_likelihood(self, j: int, phi: np.ndarray | None = None,
                                with_gradient: bool = False):
        """Log marginal likelihood of statistic j at log-hyperparameters phi.

        The gradient is with respect to (log signal variance, log length
        scales..., log noise variance), holding the constant prior mean fixed
        at the training-output mean.
        """
        n = self.n_train
        if n < 2:
            raise ValueError("log marginal likelihood needs at least 2 training points")
        hp = self.hyperparams[j] if phi is None else GpHyperparams.from_log_vector(phi)
        centered = self.outputs[:, j] - self.outputs[:, j].mean()
        k_se = _ard_cross(self.inputs, self.inputs, hp)
        k = k_se + hp.noise_variance * np.eye(n)
        try:
            chol = np.linalg.cholesky(k)
        except np.linalg.LinAlgError:
            raise NumericalDegeneracyError("kernel matrix not positive definite during fit") from None
        alpha = cho_solve((chol, True), centered)
        lml = float(-0.5 * centered @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * LOG_2PI)
        if not with_gradient:
            return lml
        k_inv = cho_solve((chol, True), np.eye(n))
        a_mat = np.outer(alpha, alpha) - k_inv
        grad = np.empty(self.param_dim + 2)
        grad[0] = 0.5 * np.sum(a_mat * k_se)
        for d in range(self.param_dim):
            diff_sq = (self.inputs[:, d][:, None] - self.inputs[:, d][None, :]) ** 2
            grad[1 + d] = 0.5 * np.sum(a_mat * (k_se * diff_sq / hp.length_scales[d] ** 2))
        grad[-1] = 0.5 * hp.noise_variance * np.trace(a_mat)
        return lml, grad

    def init_data_driven_hyperparams(self):
        """Reset each GP's hyperparameters from the current training set.

        Signal variance from the output variance, length scales from median
        pairwise distances per dimension, noise at a tenth of the signal.
        """
        n = self.n_train
        if n < 2:
            return
        lengths = np.empty(self.param_dim)
        for d in range(self.param_dim):
            diffs = np.abs(self.inputs[:, d][:, None] - self.inputs[:, d][None, :])
            positive = diffs[diffs > 0]
            lengths[d] = np.median(positive) if positive.size else 1.0
        for j in range(self.stat_dim):
            sv = float(np.var(self.outputs[:, j]))
            if not sv > 0:
                sv = 1.0
            self.hyperparams[j] = GpHyperparams(sv, lengths.copy(), 0.1 * sv)
        self.rebuild_all()

    def fit_hyperparams(self, steps: int, j: int | None = None):
        """Run gradient-ascent steps with backtracking on each statistic's LML.

        Each accepted step never decreases the LML. A degenerate kernel
        matrix aborts the fit for that statistic, keeping its previous
        hyperparameters and recording a warning.
        """
        indices = range(self.stat_dim) if j is None else [j]
        if steps <= 0:
            return
        if self.n_train < 2:
            raise ValueError("fitting requires at least 2 training points")
        for jj in indices:
            self._fit_one(jj, steps)
        self.rebuild_all()

    def _fit_one(self, j: int, steps: int):
        phi = self.hyperparams[j].to_log_vector()
        try:
            lml, grad = self.log_marginal_likelihood(j, phi, with_gradient=True)
        except NumericalDegeneracyError:
            self.fit_warnings.append(
                f"statistic {j}: degenerate kernel at fit start, keeping previous hyperparameters"
            )
            return
        eta = 1.0  # persists across ascent steps: most searches then need one probe
        for _ in range(steps):
            direction = grad / max(1.0, float(np.max(np.abs(grad))))
            eta = min(eta * 4.0, 1.0)
            improved = False
            while eta > 1e-4:
                candidate = np.clip(phi + eta * direction, _LOG_PARAM_MIN, _LOG_PARAM_MAX)
                try:
                    cand_lml = self.log_marginal_likelihood(j, candidate)
                except NumericalDegeneracyError:
                    eta *= 0.5
                    continue
                if cand_lml > lml:
                    phi, lml = candidate, cand_lml
                    _, grad = self.log_marginal_likelihood(j, candidate, with_gradient=True)
                    improved = True
                    break
                eta *= 0.5
            if not improved:
                break
        hp = GpHyperparams.from_log_vector(phi)
        hp.noise_variance = max(hp.noise_variance, self._noise_floor(j))
        self.hyperparams[j] = hp

    # ------------------------------------------------------------------
    # Checkpointing (format_version 1: inputs, outputs, per-statistic
    # hyperparameters; reload rebuilds factorizations bit-exactly)
    # ------------------------------------------------------------------

    def save(self, path):
        np.savez(
            path,
            format_version=np.array([1]),
            inputs=self.inputs,
            outputs=self.outputs,
            signal_variances=np.array([hp.signal_variance for hp in self.hyperparams]),
            length_scales=np.stack([hp.length_scales for hp in self.hyperparams]),
            noise_variances=np.array([hp.noise_variance for hp in self.hyperparams]),
            insertion_count=np.array([self.insertion_count]),
            noise_floor_rel=np.array([self.noise_floor_rel]),
        )

    @classmethod
    def load(cls, path) -> "GpSurrogate":
        data = np.load(path)
        version = int(data["format_version"][0])
        if version != 1:
            raise ValueError(f"unsupported surrogate checkpoint version {version}")
        inputs = data["inputs"]
        outputs = data["outputs"]
        hypers = [
            GpHyperparams(
                float(data["signal_variances"][j]),
                data["length_scales"][j].copy(),
                float(data["noise_variances"][j]),
            )
            for j in range(outputs.shape[1])
        ]
        surr = cls(inputs.shape[1], outputs.shape[1], hyperparams=hypers,
                   noise_floor_rel=float(data["noise_floor_rel"][0]))
        surr.inputs = inputs.copy()
        surr.outputs = outputs.copy()
        surr.insertion_count = int(data["insertion_count"][0])
        surr.rebuild_all()
        return surr


def sample_bivariate(biv: BivariatePredictive, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Correlated joint draw(s) of (mean at theta_prime, mean at theta).

    PSD-tolerant: a zero covariance returns the means exactly and a rank-1
    covariance produces draws on its exact line of support.
    """
    factor = psd_factor(biv.cov)
    n = 1 if size is None else int(size)
    z = rng.gen.standard_normal((n, 2))
    draws = biv.means + z @ factor.T
    return draws[0] if size is None else draws
