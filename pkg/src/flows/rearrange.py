"""
Volume-preserving rearrangements: channel permutations, invertible
downsampling, flattening and channel splits
"""
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from ..engine import ParameterStore, Tensor, make_rng, ops
from ..exceptions import ShapeError
from ..models.core import DownsampleKind, PermutationKind, coerce_enum
from .interfaces import InvertibleLayer, Shape

# Orthonormal 2D Haar analysis over the four 2x2 phases (a, b, c, d)
HAAR = 0.5 * np.array([
    [1, 1, 1, 1],
    [1, -1, 1, -1],
    [1, 1, -1, -1],
    [1, -1, -1, 1],
], dtype=np.float64)


def _zeros(x: Tensor) -> Tensor:
    return Tensor(np.zeros(x.shape[0], dtype=x.dtype))


def space_to_depth(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, 4C, H/2, W/2); output channel (2*di + dj)*C + c"""
    if x.ndim != 4:
        raise ShapeError('space_to_depth', f"expected (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError('space_to_depth', f"extents must be even, got {h}x{w}")
    blocks = ops.reshape(x, (b, c, h // 2, 2, w // 2, 2))
    blocks = ops.transpose(blocks, (0, 3, 5, 1, 2, 4))
    return ops.reshape(blocks, (b, 4 * c, h // 2, w // 2))


def depth_to_space(x: Tensor) -> Tensor:
    """Inverse of space_to_depth"""
    if x.ndim != 4 or x.shape[1] % 4:
        raise ShapeError('depth_to_space', f"expected (B, 4C, H, W), got {x.shape}")
    b, c4, h, w = x.shape
    c = c4 // 4
    blocks = ops.reshape(x, (b, 2, 2, c, h, w))
    blocks = ops.transpose(blocks, (0, 3, 4, 1, 5, 2))
    return ops.reshape(blocks, (b, c, 2 * h, 2 * w))


def split_channels(x: Tensor, kept: int) -> Tuple[Tensor, Tensor]:
    """Split along axis 1 into the kept head and the forwarded tail"""
    if not 0 < kept < x.shape[1]:
        raise ShapeError('split', f"cannot keep {kept} of {x.shape[1]} channels")
    return ops.slice(x, 1, 0, kept), ops.slice(x, 1, kept, x.shape[1])


def merge_channels(kept: Tensor, forwarded: Tensor) -> Tensor:
    return ops.concat([kept, forwarded], axis=1)


def _apply_channel_matrix(x: Tensor, matrix: np.ndarray) -> Tensor:
    """y_c = sum_k matrix[c, k] x_k at every pixel (or on a flat feature axis)"""
    if x.ndim == 2:
        return ops.matmul(x, Tensor(matrix.T, dtype=x.dtype))
    channels = matrix.shape[0]
    return ops.conv2d(x, Tensor(matrix.reshape(channels, channels, 1, 1), dtype=x.dtype))


def shuffle_matrix(channels: int, rng: np.random.Generator) -> np.ndarray:
    """Permutation matrix; for more than one channel the identity is redrawn"""
    order = rng.permutation(channels)
    while channels > 1 and np.array_equal(order, np.arange(channels)):
        order = rng.permutation(channels)
    return np.eye(channels)[order]


def orthogonal_matrix(channels: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((channels, channels)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


class PermutationLayer(InvertibleLayer):
    """Fixed per-pixel channel mixing by a permutation or orthogonal matrix (log-det 0)"""

    def __init__(
        self,
        name: str,
        channels: int,
        kind: Union[PermutationKind, str] = PermutationKind.ORTHOGONAL,
        seed: int = 0,
        matrix: Optional[np.ndarray] = None,
    ):
        self.name = name
        self.channels = int(channels)
        self.kind = coerce_enum(PermutationKind, kind, 'permutation')
        self.seed = seed
        self.param_names = []
        if matrix is None:
            rng = make_rng(seed, 'permutation', name)
            if self.kind == PermutationKind.SHUFFLE:
                matrix = shuffle_matrix(self.channels, rng)
            else:
                matrix = orthogonal_matrix(self.channels, rng)
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (self.channels, self.channels):
            raise ShapeError(name, f"mixing matrix must be {self.channels}x{self.channels}")
        self.matrix = matrix

    def _check(self, x: Tensor) -> None:
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            raise ShapeError(self.name, f"expected {self.channels} channels, got shape {x.shape}")

    def forward(self, x: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        self._check(x)
        return _apply_channel_matrix(x, self.matrix), _zeros(x)

    def inverse(self, y: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        self._check(y)
        return _apply_channel_matrix(y, self.matrix.T), _zeros(y)

    def output_shape(self, input_shape: Shape) -> Shape:
        return tuple(input_shape)

    def describe(self) -> Dict[str, Any]:
        return {'type': 'permutation', 'name': self.name, 'kind': self.kind.value,
                'channels': self.channels, 'seed': self.seed}


class DownsampleLayer(InvertibleLayer):
    """(c, h, w) -> (4c, h/2, w/2) by checkerboard rearrangement or orthonormal Haar"""

    def __init__(self, name: str, kind: Union[DownsampleKind, str] = DownsampleKind.HAAR):
        self.name = name
        self.kind = coerce_enum(DownsampleKind, kind, 'downsample')
        self.param_names = []

    def _haar(self, x: Tensor) -> Tensor:
        # HAAR is symmetric and orthogonal, so the same mixing undoes itself
        channels = x.shape[1] // 4
        return _apply_channel_matrix(x, np.kron(HAAR, np.eye(channels)))

    def forward(self, x: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        y = space_to_depth(x)
        if self.kind == DownsampleKind.HAAR:
            y = self._haar(y)
        return y, _zeros(x)

    def inverse(self, y: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        if y.ndim != 4 or y.shape[1] % 4:
            raise ShapeError(self.name, f"expected (B, 4C, H, W), got {y.shape}")
        if self.kind == DownsampleKind.HAAR:
            y = self._haar(y)
        return depth_to_space(y), _zeros(y)

    def output_shape(self, input_shape: Shape) -> Shape:
        c, h, w = input_shape
        if h % 2 or w % 2:
            raise ShapeError(self.name, f"extents must be even, got {h}x{w}")
        return (4 * c, h // 2, w // 2)

    def describe(self) -> Dict[str, Any]:
        return {'type': 'downsample', 'name': self.name, 'kind': self.kind.value}


class UpsampleLayer(InvertibleLayer):
    """Inverse of a DownsampleLayer used as a forward step"""

    def __init__(self, name: str, kind: Union[DownsampleKind, str] = DownsampleKind.HAAR):
        self.name = name
        self.inner = DownsampleLayer(name, kind)
        self.param_names = []

    def forward(self, x: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        return self.inner.inverse(x, params)

    def inverse(self, y: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        return self.inner.forward(y, params)

    def output_shape(self, input_shape: Shape) -> Shape:
        c, h, w = input_shape
        if c % 4:
            raise ShapeError(self.name, f"channel count {c} is not divisible by 4")
        return (c // 4, 2 * h, 2 * w)

    def describe(self) -> Dict[str, Any]:
        return {'type': 'upsample', 'name': self.name, 'kind': self.inner.kind.value}


class FlattenLayer(InvertibleLayer):
    """(c, h, w) -> (c*h*w,)"""

    def __init__(self, name: str, shape: Sequence[int]):
        self.name = name
        self.shape = tuple(int(n) for n in shape)
        self.param_names = []

    def forward(self, x: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        if x.shape[1:] != self.shape:
            raise ShapeError(self.name, f"expected per-sample shape {self.shape}, got {x.shape[1:]}")
        return ops.flatten(x), _zeros(x)

    def inverse(self, y: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        return ops.reshape(y, (y.shape[0],) + self.shape), _zeros(y)

    def output_shape(self, input_shape: Shape) -> Shape:
        return (int(np.prod(input_shape)),)

    def describe(self) -> Dict[str, Any]:
        return {'type': 'flatten', 'name': self.name, 'shape': list(self.shape)}
