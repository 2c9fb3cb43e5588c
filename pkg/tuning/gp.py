"""Gaussian-process regression on unit-cube knob coordinates.

Used twice by the sampler: as the surrogate inside constrained Bayesian
optimization and as a plain regressor for the exploitation picks.
Targets are standardized before fitting and predictions are returned in
raw target units.
"""

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from utils.errors import NumericalError

logger = logging.getLogger(__name__)

# exact factorization first, then additive jitter escalated x10 from 1e-8 up to 1e-2
JITTERS = (0.0,) + tuple(10.0 ** e for e in range(-8, -1))
STD_FLOOR = 1e-12

LENGTH_SCALE_GRID = (0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 2.0)
NOISE_GRID = (1e-6, 1e-4, 1e-2, 1e-1)


class KernelKind(str, Enum):
    matern52 = "matern52"
    rbf = "rbf"


@dataclass(frozen=True)
class KernelConfig:
    """Covariance function with hyperparameters in standardized-target units."""
    kind: KernelKind
    length_scales: Tuple[float, ...]
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        if not self.length_scales or any(ls <= 0 for ls in self.length_scales):
            raise ValueError(f"length scales must be positive, got {self.length_scales}")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")

    @classmethod
    def isotropic(
        cls,
        ndim: int,
        length_scale: float = 0.5,
        kind: KernelKind = KernelKind.matern52,
        signal_variance: float = 1.0,
        noise_variance: float = 0.0,
    ) -> "KernelConfig":
        return cls(KernelKind(kind), (float(length_scale),) * ndim, signal_variance, noise_variance)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """covariance matrix between row sets a (n1, d) and b (n2, d)"""
        scale = np.asarray(self.length_scales, dtype=float)
        diff = (a[:, None, :] - b[None, :, :]) / scale
        r = np.sqrt(np.sum(diff * diff, axis=2))
        if self.kind == KernelKind.rbf:
            return self.signal_variance * np.exp(-0.5 * r * r)
        sqrt5_r = np.sqrt(5.0) * r
        return self.signal_variance * (1.0 + sqrt5_r + (5.0 / 3.0) * r * r) * np.exp(-sqrt5_r)


@dataclass(frozen=True)
class GPModel:
    """A fitted GP: standardized targets, Cholesky factor, and alpha = K^-1 z."""
    inputs: np.ndarray
    targets_raw: np.ndarray
    target_mean: float
    target_std: float
    kernel: KernelConfig
    factor: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def ndim(self) -> int:
        return self.inputs.shape[1]

    @property
    def standardized_targets(self) -> np.ndarray:
        return (self.targets_raw - self.target_mean) / self.target_std


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"expected a list of points, got array of shape {x.shape}")
    return x


def fit(inputs, targets: Sequence[float], kernel: KernelConfig) -> GPModel:
    """Fit an exact GP; diagonal jitter is added only when (K + noise*I) does not factorize as is."""
    x = _as_points(inputs)
    y = np.asarray(targets, dtype=float).ravel()
    if len(x) < 1:
        raise ValueError("need at least one training point")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} inputs but {len(y)} targets")
    if len(kernel.length_scales) not in (1, x.shape[1]):
        raise ValueError(f"kernel has {len(kernel.length_scales)} length scales for {x.shape[1]}-d inputs")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise ValueError("inputs and targets must be finite")

    mean = float(y.mean())
    std = float(y.std())
    if std < STD_FLOOR:
        std = 1.0
    z = (y - mean) / std

    gram = kernel(x, x) + kernel.noise_variance * np.eye(len(x))
    for jitter in JITTERS:
        try:
            factor = cholesky(gram + jitter * np.eye(len(x)), lower=True)
            break
        except LinAlgError:
            logger.debug("cholesky failed with jitter %g", jitter)
    else:
        raise NumericalError(f"covariance not positive definite even with jitter {JITTERS[-1]:g}")

    alpha = cho_solve((factor, True), z)
    return GPModel(
        inputs=x,
        targets_raw=y,
        target_mean=mean,
        target_std=std,
        kernel=kernel,
        factor=factor,
        alpha=alpha,
        jitter=jitter,
    )


def predict_many(model: GPModel, points) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and (latent) variance at many points, raw target units."""
    xq = _as_points(points)
    if xq.shape[1] != model.ndim:
        raise ValueError(f"query has {xq.shape[1]} dims, model has {model.ndim}")
    k_star = model.kernel(model.inputs, xq)
    mean = k_star.T @ model.alpha
    v = solve_triangular(model.factor, k_star, lower=True)
    var = model.kernel.signal_variance - np.sum(v * v, axis=0)
    var = np.maximum(var, 0.0)
    return mean * model.target_std + model.target_mean, var * model.target_std ** 2


def predict(model: GPModel, x: Sequence[float]) -> Tuple[float, float]:
    """Posterior (mean, variance) at a single point."""
    mean, var = predict_many(model, np.asarray(x, dtype=float)[None, :])
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(model: GPModel) -> float:
    """log p(z | X, kernel) of the standardized targets z."""
    z = model.standardized_targets
    n = len(z)
    return float(
        -0.5 * z @ model.alpha
        - np.sum(np.log(np.diag(model.factor)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def optimize_hyperparams(inputs, targets: Sequence[float], kind: KernelKind = KernelKind.matern52) -> KernelConfig:
    """Grid-search an isotropic kernel by log marginal likelihood.

    Ties go to the larger length scale, then the larger noise.
    """
    x = _as_points(inputs)
    if len(x) < 2:
        raise ValueError("hyperparameter search needs at least two points")

    best, best_lml = None, -np.inf
    for length_scale, noise in itertools.product(LENGTH_SCALE_GRID, NOISE_GRID):
        cfg = KernelConfig.isotropic(x.shape[1], length_scale, kind, 1.0, noise)
        try:
            lml = log_marginal_likelihood(fit(x, targets, cfg))
        except NumericalError:
            continue
        if lml >= best_lml:
            best, best_lml = cfg, lml
    if best is None:
        raise NumericalError("no kernel on the hyperparameter grid could be fitted")
    return best
