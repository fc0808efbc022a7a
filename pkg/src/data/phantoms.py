"""
Synthetic image phantoms in [0, 1]

Each generator draws image ``i`` from its own stream keyed by
(seed, kind, i), so a dataset of N images is a prefix of one of N + 1.
"""
import logging
from typing import Callable, Dict, Union

import numpy as np

from ..engine import make_rng
from ..models.core import PhantomKind, coerce_enum, validate_positive_int

logger = logging.getLogger(__name__)


def _grid(size: int):
    """Pixel-center coordinates in [-1, 1], y pointing up"""
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    return coords[None, :], -coords[:, None]


def disk(size: int, radius: float, value: float = 1.0) -> np.ndarray:
    """Centered disk; ``radius`` in pixels"""
    center = (size - 1) / 2.0
    rows, cols = np.mgrid[0:size, 0:size]
    inside = (rows - center) ** 2 + (cols - center) ** 2 <= radius ** 2
    return np.where(inside, value, 0.0)


def _ellipse_image(size: int, rng: np.random.Generator) -> np.ndarray:
    x, y = _grid(size)
    image = np.zeros((size, size))
    # outer body, then a few inner structures with signed contrast
    image[(x / 0.8) ** 2 + (y / 0.9) ** 2 <= 1.0] = 0.5
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(-0.5, 0.5, size=2)
        a, b = rng.uniform(0.08, 0.35, size=2)
        angle = rng.uniform(0.0, np.pi)
        xr = (x - cx) * np.cos(angle) + (y - cy) * np.sin(angle)
        yr = -(x - cx) * np.sin(angle) + (y - cy) * np.cos(angle)
        image[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += rng.uniform(-0.3, 0.5)
    return np.clip(image, 0.0, 1.0)


def _convex_polygon(size: int, rng: np.random.Generator) -> np.ndarray:
    x, y = _grid(size)
    corners = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=corners))
    radius = rng.uniform(0.25, 0.7)
    cx, cy = rng.uniform(-0.3, 0.3, size=2)
    px = cx + radius * np.cos(angles)
    py = cy + radius * np.sin(angles)
    inside = np.ones((size, size), dtype=bool)
    for k in range(corners):
        x0, y0 = px[k], py[k]
        x1, y1 = px[(k + 1) % corners], py[(k + 1) % corners]
        # counter-clockwise vertex order keeps the interior on the left of every edge
        inside &= (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0
    return inside.astype(np.float64)


def _segment_distance(x: np.ndarray, y: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    direction = end - start
    length2 = float(direction @ direction) or 1e-12
    t = np.clip(((x - start[0]) * direction[0] + (y - start[1]) * direction[1]) / length2, 0.0, 1.0)
    return np.hypot(x - (start[0] + t * direction[0]), y - (start[1] + t * direction[1]))


def _strokes(size: int, rng: np.random.Generator) -> np.ndarray:
    x, y = _grid(size)
    points = rng.uniform(-0.6, 0.6, size=(int(rng.integers(3, 6)), 2))
    distance = np.full((size, size), np.inf)
    for start, end in zip(points[:-1], points[1:]):
        distance = np.minimum(distance, _segment_distance(x, y, start, end))
    width = rng.uniform(0.08, 0.14)
    edge = 2.0 / size
    return np.clip((width - distance) / edge + 0.5, 0.0, 1.0)


def _shape_image(size: int, rng: np.random.Generator) -> np.ndarray:
    image = _convex_polygon(size, rng) * rng.uniform(0.4, 1.0)
    if rng.uniform() < 0.5:
        image = np.maximum(image, _convex_polygon(size, rng) * rng.uniform(0.4, 1.0))
    return image


GENERATORS: Dict[PhantomKind, Callable[[int, np.random.Generator], np.ndarray]] = {
    PhantomKind.ELLIPSES: _ellipse_image,
    PhantomKind.SHAPES: _shape_image,
    PhantomKind.DIGITS_LIKE: _strokes,
}


def generate_phantoms(kind: Union[PhantomKind, str], size: int, count: int, seed: int = 0) -> np.ndarray:
    """(count, 1, size, size) float64 images in [0, 1]"""
    kind = coerce_enum(PhantomKind, kind, 'phantom kind')
    if kind not in GENERATORS:
        raise ValueError(f"{kind.value} is not an image phantom")
    size = validate_positive_int(size, 'size')
    count = validate_positive_int(count, 'count')
    draw = GENERATORS[kind]
    images = np.stack([draw(size, make_rng(seed, kind.value, index)) for index in range(count)])
    logger.debug(f"Generated {count} {kind.value} phantoms at {size}x{size}")
    return images[:, None]
