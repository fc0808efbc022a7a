"""
Image quality metrics and their tables
"""
import logging
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.ndimage import correlate

from ..models.core import RangeMode, coerce_enum

logger = logging.getLogger(__name__)

WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
METRIC_COLUMNS = ['id', 'psnr', 'ssim']


def _pair(estimate: np.ndarray, reference: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape:
        raise ValueError(f"Image shapes differ: {estimate.shape} vs {reference.shape}")
    return estimate, reference


def data_range(
    reference: np.ndarray,
    range_mode: Union[RangeMode, str] = RangeMode.MAX_MIN,
    value: Optional[float] = None,
) -> float:
    """L = max - min of the reference, or an externally supplied value (e.g. per-volume max)"""
    mode = coerce_enum(RangeMode, range_mode, 'range_mode')
    if mode == RangeMode.EXTERNAL:
        if value is None or value <= 0:
            raise ValueError("External range mode needs a positive data range")
        return float(value)
    return float(np.max(reference) - np.min(reference))


def psnr(
    estimate: np.ndarray,
    reference: np.ndarray,
    range_mode: Union[RangeMode, str] = RangeMode.MAX_MIN,
    value: Optional[float] = None,
) -> float:
    """10 log10(L^2 / MSE) in dB; identical images give +inf"""
    estimate, reference = _pair(estimate, reference)
    error = float(np.mean((estimate - reference) ** 2))
    if error == 0:
        return float('inf')
    peak = data_range(reference, range_mode, value)
    return float(10.0 * np.log10(peak ** 2 / error))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    """Normalised separable Gaussian window"""
    offsets = np.arange(size) - (size - 1) / 2.0
    profile = np.exp(-offsets ** 2 / (2 * sigma ** 2))
    window = np.outer(profile, profile)
    return window / window.sum()


def _as_image(image: np.ndarray) -> np.ndarray:
    image = np.squeeze(image)
    if image.ndim != 2:
        raise ValueError(f"SSIM needs a single-channel 2D image, got shape {image.shape}")
    return image


def ssim_map(
    estimate: np.ndarray,
    reference: np.ndarray,
    range_mode: Union[RangeMode, str] = RangeMode.MAX_MIN,
    value: Optional[float] = None,
) -> np.ndarray:
    """Local SSIM at every position where the window fits inside the image"""
    estimate, reference = _pair(estimate, reference)
    x, y = _as_image(estimate), _as_image(reference)
    if min(x.shape) < WINDOW:
        raise ValueError(f"Image extents {x.shape} are smaller than the {WINDOW}x{WINDOW} window")
    peak = data_range(reference, range_mode, value)
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2
    window = gaussian_window()

    def local(image: np.ndarray) -> np.ndarray:
        return correlate(image, window, mode='constant')

    mu_x, mu_y = local(x), local(y)
    var_x = local(x * x) - mu_x ** 2
    var_y = local(y * y) - mu_y ** 2
    cov = local(x * y) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    denominator = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    half = WINDOW // 2
    return (numerator / denominator)[half:x.shape[0] - half, half:x.shape[1] - half]


def ssim(
    estimate: np.ndarray,
    reference: np.ndarray,
    range_mode: Union[RangeMode, str] = RangeMode.MAX_MIN,
    value: Optional[float] = None,
) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03"""
    return float(np.mean(ssim_map(estimate, reference, range_mode, value)))


def metrics_table(
    estimates: Sequence[np.ndarray],
    references: Sequence[np.ndarray],
    ids: Optional[Iterable[str]] = None,
    range_mode: Union[RangeMode, str] = RangeMode.MAX_MIN,
    values: Optional[Sequence[float]] = None,
) -> pd.DataFrame:
    """Per-image PSNR and SSIM rows"""
    if len(estimates) != len(references):
        raise ValueError(f"Got {len(estimates)} reconstructions for {len(references)} references")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(estimates))]
    if len(ids) != len(estimates):
        raise ValueError("Need one id per image")
    rows = []
    for index, (estimate, reference) in enumerate(zip(estimates, references)):
        value = values[index] if values is not None else None
        rows.append({
            'id': ids[index],
            'psnr': psnr(estimate, reference, range_mode, value),
            'ssim': ssim(estimate, reference, range_mode, value),
        })
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def aggregate_metrics(table: pd.DataFrame) -> pd.DataFrame:
    """Rows ``mean`` and ``std`` (population) for each metric column"""
    metrics = table[['psnr', 'ssim']].astype(np.float64)
    with np.errstate(invalid='ignore'):
        summary = pd.DataFrame({
            'statistic': ['mean', 'std'],
            'psnr': [metrics['psnr'].mean(), metrics['psnr'].std(ddof=0)],
            'ssim': [metrics['ssim'].mean(), metrics['ssim'].std(ddof=0)],
        })
    return summary


def format_summary(summary: pd.DataFrame) -> str:
    """``psnr: m ± s`` lines in the style of a results table"""
    mean = summary.set_index('statistic').loc['mean']
    std = summary.set_index('statistic').loc['std']
    return '\n'.join(f"{name}: {mean[name]:.2f} ± {std[name]:.2f}" for name in ('psnr', 'ssim'))
