"""
Masked 2D Fourier sampling for single-coil MRI
"""
import logging
from typing import Any, Dict, Optional, Union

import numpy as np

from ..engine import make_rng
from ..models.core import SamplingMask
from .interfaces import MeasurementModel

logger = logging.getLogger(__name__)


def make_mask(width: int, center_fraction: float = 0.08, acceleration: int = 4, seed: int = 0) -> SamplingMask:
    """Select the lowest-frequency column block plus random columns up to width // acceleration

    Columns are in centered (fftshift) order, so the low-frequency block sits
    in the middle of the vector.
    """
    if width < 4:
        raise ValueError(f"Mask width must be at least 4, got {width}")
    if acceleration < 1:
        raise ValueError(f"Acceleration must be at least 1, got {acceleration}")
    if not 0 <= center_fraction <= 1:
        raise ValueError(f"Center fraction must lie in [0, 1], got {center_fraction}")
    num_low = int(np.floor(center_fraction * width))
    budget = width // acceleration
    if budget < 1:
        raise ValueError(f"Acceleration {acceleration} leaves no columns out of {width}")
    if num_low > budget:
        raise ValueError(
            f"Center block of {num_low} columns exceeds the budget of {budget} columns"
        )
    columns = np.zeros(width, dtype=bool)
    pad = (width - num_low + 1) // 2
    columns[pad:pad + num_low] = True
    rng = make_rng(seed, 'mask', width)
    candidates = np.flatnonzero(~columns)
    extra = rng.choice(candidates, size=budget - num_low, replace=False)
    columns[extra] = True
    return SamplingMask(columns=columns, center_fraction=center_fraction, acceleration=acceleration, seed=seed)


def _as_complex(y: np.ndarray) -> np.ndarray:
    return y[:, 0] + 1j * y[:, 1]


def _as_channels(k: np.ndarray) -> np.ndarray:
    return np.stack([k.real, k.imag], axis=1)


def zero_filled_ifft(y: np.ndarray, mask: Union[SamplingMask, np.ndarray]) -> np.ndarray:
    """Magnitude of the unitary inverse FFT of two-channel k-space with unsampled columns zeroed

    ``y`` is (2, H, W) or (B, 2, H, W) in centered order.
    """
    columns = mask.columns if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 3
    batch = y[None] if single else y
    if batch.ndim != 4 or batch.shape[1] != 2 or batch.shape[-1] != columns.size:
        raise ValueError(f"k-space of shape {y.shape} does not fit a mask of width {columns.size}")
    k = _as_complex(batch) * columns
    image = np.abs(np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), norm='ortho'))
    return image[0] if single else image


class FourierOperator(MeasurementModel):
    """y = M F x with F the unitary 2D FFT (centered) and M the column mask

    k-space is a real (2, H, W) array of real and imaginary parts; unsampled
    columns are zero. The adjoint keeps the real part of F^H M y.
    """

    kind = 'fourier'

    def __init__(self, mask: SamplingMask, height: Optional[int] = None):
        self.mask = mask
        width = mask.width
        height = width if height is None else int(height)
        self.image_shape = (height, width)
        self.measurement_shape = (2, height, width)

    def _forward_batch(self, x: np.ndarray) -> np.ndarray:
        k = np.fft.fftshift(np.fft.fft2(x, norm='ortho'), axes=(-2, -1))
        return _as_channels(k * self.mask.columns)

    def _adjoint_batch(self, y: np.ndarray) -> np.ndarray:
        k = _as_complex(y) * self.mask.columns
        return np.real(np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), norm='ortho'))

    def approximate_inverse(self, y: np.ndarray) -> np.ndarray:
        batch, single = self._batched(y, self.measurement_shape)
        image = zero_filled_ifft(batch, self.mask)
        return image[0] if single else image

    def describe(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'image_shape': list(self.image_shape),
            'mask': self.mask.to_text().strip(),
            'center_fraction': self.mask.center_fraction,
            'acceleration': self.mask.acceleration,
            'seed': self.mask.seed,
        }
