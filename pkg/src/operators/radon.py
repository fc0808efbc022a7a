"""
Parallel-beam Radon transform and filtered back-projection
"""
import logging
from typing import Any, Dict, Optional

import numpy as np
from scipy import sparse

from ..models.core import validate_positive_int
from .interfaces import MeasurementModel

logger = logging.getLogger(__name__)

RAY_STEP = 0.5


def _bilinear_entries(rows: np.ndarray, cols: np.ndarray, size: int):
    """Pixel indices and weights of bilinear interpolation at fractional (row, col) points"""
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    point = np.arange(rows.size)
    indices, weights, owners = [], [], []
    for dr, dc, weight in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        r = r0 + dr
        c = c0 + dc
        inside = (r >= 0) & (r < size) & (c >= 0) & (c < size) & (weight > 0)
        indices.append(r[inside] * size + c[inside])
        weights.append(weight[inside])
        owners.append(point[inside])
    return np.concatenate(owners), np.concatenate(indices), np.concatenate(weights)


def ram_lak_kernel(length: int, spacing: float) -> np.ndarray:
    """Frequency response of the band-limited ramp filter for a padded row of ``length``

    Built from the spatial kernel h(0) = 1/(4 tau^2), h(n) = -1/(n pi tau)^2 for
    odd n and 0 for even n, so the discrete filter has no DC bias.
    """
    n = np.concatenate([np.arange(0, length // 2 + 1), np.arange(-(length // 2) + 1, 0)])
    h = np.zeros(length)
    h[0] = 1.0 / (4.0 * spacing ** 2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    return np.real(np.fft.fft(h)) * spacing


class RadonOperator(MeasurementModel):
    """Sinogram of an N x N image at ``n_angles`` angles in [0, pi) and ``n_detectors`` offsets

    Pixels have unit width and the detector row spans the image diagonal.
    Line integrals are sampled every half pixel along each ray with bilinear
    interpolation, so the operator is an explicit sparse matrix and its
    adjoint is the transpose.
    """

    kind = 'radon'

    def __init__(self, image_size: int, n_angles: int, n_detectors: Optional[int] = None, attenuation: float = 1.0):
        self.size = validate_positive_int(image_size, 'image_size')
        self.n_angles = validate_positive_int(n_angles, 'n_angles')
        diagonal = self.size * np.sqrt(2.0)
        self.n_detectors = validate_positive_int(
            n_detectors if n_detectors is not None else int(np.ceil(diagonal)) | 1, 'n_detectors'
        )
        if attenuation <= 0:
            raise ValueError("Attenuation scale must be positive")
        self.attenuation = float(attenuation)
        self.image_shape = (self.size, self.size)
        self.measurement_shape = (self.n_angles, self.n_detectors)
        self.angles = np.arange(self.n_angles) * np.pi / self.n_angles
        self.spacing = diagonal / self.n_detectors
        self.offsets = (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.spacing
        self.matrix = self._build(diagonal)
        self._filter_length = int(2 ** np.ceil(np.log2(2 * self.n_detectors)))
        self._filter = ram_lak_kernel(self._filter_length, self.spacing)
        logger.debug(
            f"Radon operator {self.size}x{self.size}, {self.n_angles} angles, "
            f"{self.n_detectors} detectors, {self.matrix.nnz} nonzeros"
        )

    def _build(self, diagonal: float) -> sparse.csr_matrix:
        half = self.size / 2.0 + 1.0
        steps = np.arange(-np.ceil(diagonal / 2.0 / RAY_STEP), np.ceil(diagonal / 2.0 / RAY_STEP) + 1) * RAY_STEP
        center = (self.size - 1) / 2.0
        blocks = []
        for angle_index, theta in enumerate(self.angles):
            cos, sin = np.cos(theta), np.sin(theta)
            s, t = np.meshgrid(self.offsets, steps, indexing='ij')
            x = s * cos - t * sin
            y = s * sin + t * cos
            near = (np.abs(x) < half) & (np.abs(y) < half)
            ray = np.broadcast_to(np.arange(self.n_detectors)[:, None], s.shape)[near]
            owners, pixels, weights = _bilinear_entries(center - y[near], x[near] + center, self.size)
            rows = angle_index * self.n_detectors + ray[owners]
            blocks.append((rows, pixels, weights * RAY_STEP))
        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        data = np.concatenate([b[2] for b in blocks])
        shape = (self.n_angles * self.n_detectors, self.size * self.size)
        return sparse.coo_matrix((data, (rows, cols)), shape=shape).tocsr()

    def _forward_batch(self, x: np.ndarray) -> np.ndarray:
        flat = x.reshape(x.shape[0], -1).T
        return np.asarray(self.matrix @ flat).T.reshape((x.shape[0],) + self.measurement_shape)

    def _adjoint_batch(self, y: np.ndarray) -> np.ndarray:
        flat = y.reshape(y.shape[0], -1).T
        return np.asarray(self.matrix.T @ flat).T.reshape((y.shape[0],) + self.image_shape)

    def filter_sinogram(self, sinogram: np.ndarray) -> np.ndarray:
        """Ram-Lak filtering of each detector row, zero-padded against wrap-around"""
        padded = np.zeros(sinogram.shape[:-1] + (self._filter_length,))
        padded[..., : self.n_detectors] = sinogram
        filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=-1) * self._filter, axis=-1))
        return filtered[..., : self.n_detectors]

    def fbp(self, sinogram: np.ndarray) -> np.ndarray:
        """Filtered back-projection with linear interpolation along the detector row"""
        batch, single = self._batched(sinogram, self.measurement_shape)
        filtered = self.filter_sinogram(np.asarray(batch, dtype=np.float64))
        center = (self.size - 1) / 2.0
        coords = np.arange(self.size) - center
        x = coords[None, :]
        y = -coords[:, None]
        out = np.zeros((batch.shape[0],) + self.image_shape)
        for angle_index, theta in enumerate(self.angles):
            s = (x * np.cos(theta) + y * np.sin(theta)).reshape(-1)
            for b in range(batch.shape[0]):
                row = filtered[b, angle_index]
                out[b] += np.interp(s, self.offsets, row, left=0.0, right=0.0).reshape(self.image_shape)
        out *= np.pi / self.n_angles
        return out[0] if single else out

    def approximate_inverse(self, y: np.ndarray) -> np.ndarray:
        return self.fbp(y)

    def describe(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'image_size': self.size,
            'n_angles': self.n_angles,
            'n_detectors': self.n_detectors,
            'attenuation': self.attenuation,
        }
