"""
Measurement noise models
"""
from typing import Optional, Union

import numpy as np

from ..engine import make_rng
from ..models.core import NoiseMode, coerce_enum


def _generator(seed: int, rng: Optional[np.random.Generator], purpose: str) -> np.random.Generator:
    return rng if rng is not None else make_rng(seed, purpose)


def add_relative_gaussian_noise(
    y: np.ndarray,
    level: float,
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
    mode: Union[NoiseMode, str] = NoiseMode.RELATIVE,
) -> np.ndarray:
    """y + eps with noise scaled relative to the measurement

    relative: eps_i ~ N(0, sigma^2), sigma = level * ||y|| / sqrt(m), so that
    E||eps|| is approximately level * ||y||.
    componentwise: eps_i ~ N(0, (level * |y_i|)^2).
    """
    if level < 0:
        raise ValueError(f"Noise level must be non-negative, got {level}")
    mode = coerce_enum(NoiseMode, mode, 'noise_mode')
    y = np.asarray(y, dtype=np.float64)
    if level == 0:
        return y.copy()
    gen = _generator(seed, rng, 'gaussian-noise')
    eps = gen.standard_normal(y.shape)
    if mode == NoiseMode.COMPONENTWISE:
        return y + level * np.abs(y) * eps
    sigma = level * np.linalg.norm(y) / np.sqrt(y.size)
    return y + sigma * eps


def poisson_lowdose_noise(
    sinogram: np.ndarray,
    photon_count: float = 4096,
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
    attenuation: float = 1.0,
) -> np.ndarray:
    """Low-dose CT counts k ~ Poisson(N0 exp(-mu p)), returned as -ln(max(k, 1) / N0) / mu"""
    if photon_count < 1:
        raise ValueError(f"Photon count must be at least 1, got {photon_count}")
    if attenuation <= 0:
        raise ValueError("Attenuation scale must be positive")
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if np.any(sinogram < 0):
        raise ValueError("Sinogram must be non-negative")
    gen = _generator(seed, rng, 'poisson-noise')
    counts = gen.poisson(photon_count * np.exp(-attenuation * sinogram))
    return -np.log(np.maximum(counts, 1) / photon_count) / attenuation
