"""
Low-dimensional problems with known densities
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from ..engine import make_rng


def _default_means() -> np.ndarray:
    return np.array([[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]])


def _default_covariances() -> np.ndarray:
    return np.array([
        [[0.5, 0.0], [0.0, 0.5]],
        [[0.4, 0.2], [0.2, 0.6]],
        [[0.6, -0.25], [-0.25, 0.3]],
    ])


@dataclass
class GaussianMixture2D:
    """Weighted mixture of 2D Gaussians"""
    weights: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.4, 0.3]))
    means: np.ndarray = field(default_factory=_default_means)
    covariances: np.ndarray = field(default_factory=_default_covariances)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        k = self.weights.size
        if self.means.shape != (k, 2) or self.covariances.shape != (k, 2, 2):
            raise ValueError("Mixture needs K weights, K x 2 means and K x 2 x 2 covariances")
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0):
            raise ValueError("Mixture weights must be non-negative and sum to one")
        self._cholesky = np.linalg.cholesky(self.covariances)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        component = rng.choice(self.weights.size, size=count, p=self.weights)
        noise = rng.standard_normal((count, 2))
        return self.means[component] + np.einsum('nij,nj->ni', self._cholesky[component], noise)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        inverse = np.linalg.inv(self.covariances)
        _, logdet = np.linalg.slogdet(self.covariances)
        diff = points[:, None, :] - self.means[None]
        mahalanobis = np.einsum('nki,kij,nkj->nk', diff, inverse, diff)
        terms = np.log(self.weights)[None] - 0.5 * (mahalanobis + logdet[None] + 2 * np.log(2 * np.pi))
        return logsumexp(terms, axis=1)

    def entropy(self, resolution: int = 801, margin: float = 7.0) -> float:
        """Differential entropy -int p log p by midpoint quadrature on a bounding box"""
        spread = margin * np.sqrt(self.covariances[:, [0, 1], [0, 1]].max(axis=0))
        low = self.means.min(axis=0) - spread
        high = self.means.max(axis=0) + spread
        xs = np.linspace(low[0], high[0], resolution)
        ys = np.linspace(low[1], high[1], resolution)
        cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
        grid = np.stack(np.meshgrid(xs, ys, indexing='ij'), axis=-1).reshape(-1, 2)
        log_p = self.log_density(grid)
        return float(-np.sum(np.exp(log_p) * log_p) * cell)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'weights': self.weights.tolist(),
            'means': self.means.tolist(),
            'covariances': self.covariances.tolist(),
        }


@dataclass
class LinearGaussianProblem:
    """y = A x + e with x ~ N(mu, Sigma) and e ~ N(0, noise_std^2 I)

    The posterior p(x | y) is Gaussian with covariance
    (Sigma^-1 + A^T A / s^2)^-1 and mean C (Sigma^-1 mu + A^T y / s^2).
    """
    matrix: np.ndarray
    prior_mean: np.ndarray
    prior_covariance: np.ndarray
    noise_std: float = 0.1

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        self.prior_mean = np.asarray(self.prior_mean, dtype=np.float64)
        self.prior_covariance = np.asarray(self.prior_covariance, dtype=np.float64)
        n = self.matrix.shape[1]
        if self.prior_mean.shape != (n,) or self.prior_covariance.shape != (n, n):
            raise ValueError(f"Prior must match the operator's {n} columns")
        if self.noise_std <= 0:
            raise ValueError("Noise standard deviation must be positive")
        precision = np.linalg.inv(self.prior_covariance) + self.matrix.T @ self.matrix / self.noise_std ** 2
        self.posterior_covariance = np.linalg.inv(precision)
        self._prior_cholesky = np.linalg.cholesky(self.prior_covariance)

    @classmethod
    def default(cls, seed: int = 0, noise_std: float = 0.3) -> 'LinearGaussianProblem':
        """Two-dimensional instance with a random well-conditioned operator"""
        rng = make_rng(seed, 'linear-gaussian')
        matrix = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
        return cls(
            matrix=matrix,
            prior_mean=np.array([0.5, -0.5]),
            prior_covariance=np.array([[1.0, 0.3], [0.3, 0.5]]),
            noise_std=noise_std,
        )

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def sample(self, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        x = self.prior_mean + rng.standard_normal((count, self.dim)) @ self._prior_cholesky.T
        y = x @ self.matrix.T + self.noise_std * rng.standard_normal((count, self.matrix.shape[0]))
        return x, y

    def posterior_mean(self, y: np.ndarray) -> np.ndarray:
        precision_mean = np.linalg.solve(self.prior_covariance, self.prior_mean)
        data = np.asarray(y, dtype=np.float64) @ self.matrix / self.noise_std ** 2
        return (precision_mean + data) @ self.posterior_covariance.T

    def posterior_std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.posterior_covariance))

    def posterior(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.posterior_mean(y), self.posterior_covariance

    def to_dict(self) -> Dict[str, Any]:
        return {
            'matrix': self.matrix.tolist(),
            'prior_mean': self.prior_mean.tolist(),
            'prior_covariance': self.prior_covariance.tolist(),
            'noise_std': self.noise_std,
        }


def sample_mixture(count: int, seed: int = 0, mixture: Optional[GaussianMixture2D] = None) -> np.ndarray:
    mixture = mixture if mixture is not None else GaussianMixture2D()
    return mixture.sample(count, make_rng(seed, 'gaussian-mixture-2d'))
