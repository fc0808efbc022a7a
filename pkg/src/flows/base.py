"""
Base distributions of the latent space

Both log-densities keep their normalising constants so that likelihoods are
comparable across models with different bases.
"""
import math
from typing import Union

import numpy as np
from scipy.special import gammaln

from ..engine import Tensor, ops
from ..models.core import BaseKind, coerce_enum, validate_positive_int

LOG_2PI = math.log(2.0 * math.pi)


def log_unit_sphere_area(n: int) -> float:
    """ln S_n with S_n = 2 pi^(n/2) / Gamma(n/2), via log-gamma"""
    return math.log(2.0) + 0.5 * n * math.log(math.pi) - float(gammaln(0.5 * n))


def radial_constant(n: int) -> float:
    """ln(sqrt(2) / (sqrt(pi) S_n))"""
    return 0.5 * math.log(2.0) - 0.5 * math.log(math.pi) - log_unit_sphere_area(n)


def _squared_norm(z: np.ndarray) -> np.ndarray:
    return np.sum(np.square(z, dtype=np.float64), axis=-1)


def log_density_normal(z: np.ndarray) -> Union[float, np.ndarray]:
    """Standard normal log-density of one vector (n,) or a batch (B, n)"""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[-1]
    value = -0.5 * _squared_norm(z) - 0.5 * n * LOG_2PI
    return float(value) if np.ndim(value) == 0 else value


def log_density_radial(z: np.ndarray) -> Union[float, np.ndarray]:
    """Radial Gaussian log-density; z = 0 with n >= 2 gives -inf"""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[-1]
    r2 = _squared_norm(z)
    if n == 1:
        return log_density_normal(z)
    with np.errstate(divide='ignore'):
        value = radial_constant(n) - 0.5 * (n - 1) * np.log(r2) - 0.5 * r2
    value = np.where(r2 > 0, value, -np.inf)
    return float(value) if np.ndim(value) == 0 else value


class BaseDistribution:
    """Latent density p_z of dimension ``dim``"""

    def __init__(self, kind: Union[BaseKind, str], dim: int):
        self.kind = coerce_enum(BaseKind, kind, 'base')
        self.dim = validate_positive_int(dim, 'dim')

    def __repr__(self) -> str:
        return f"BaseDistribution({self.kind.value}, dim={self.dim})"

    def log_density(self, z: np.ndarray) -> Union[float, np.ndarray]:
        if self.kind == BaseKind.NORMAL:
            return log_density_normal(z)
        return log_density_radial(z)

    def log_prob(self, z: Tensor) -> Tensor:
        """Recorded per-sample log-density of a (B, dim) latent batch"""
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise ValueError(f"Expected latent batch of shape (B, {self.dim}), got {z.shape}")
        r2 = ops.sum(ops.square(z), axis=1)
        if self.kind == BaseKind.NORMAL or self.dim == 1:
            return ops.sub(ops.mul(r2, -0.5), 0.5 * self.dim * LOG_2PI)

        at_origin = r2.data == 0
        if at_origin.any():
            # keep the tape finite at the origin, then overwrite with the sentinel
            r2 = ops.add(r2, at_origin.astype(z.dtype))
        value = ops.sub(
            ops.mul(ops.log(r2), -0.5 * (self.dim - 1)),
            ops.mul(r2, 0.5),
        )
        value = ops.add(value, radial_constant(self.dim))
        if at_origin.any():
            keep = (~at_origin).astype(z.dtype)
            sentinel = np.where(at_origin, -np.inf, 0.0).astype(z.dtype)
            value = ops.add(ops.mul(value, keep), sentinel)
        return value

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` latent vectors as a (count, dim) float64 array"""
        count = validate_positive_int(count, 'count')
        draws = rng.standard_normal((count, self.dim))
        if self.kind == BaseKind.NORMAL:
            return draws
        norms = np.linalg.norm(draws, axis=1, keepdims=True)
        norms = np.where(norms > 0, norms, 1.0)
        radius = np.abs(rng.standard_normal((count, 1)))
        return draws / norms * radius
