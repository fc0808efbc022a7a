"""
Functional API over the primitive set
"""
from typing import Any, Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .primitives import LEAKY_SLOPE, Op, apply
from .tensor import Tensor

TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants, matching the dtype of ``like`` when given"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def add(a: TensorLike, b: TensorLike) -> Tensor:
    return apply(Op.ADD, _pair(a, b))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return apply(Op.SUB, _pair(a, b))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    return apply(Op.MUL, _pair(a, b))


def square(x: Tensor) -> Tensor:
    return apply(Op.MUL, (x, x))


def exp(x: Tensor) -> Tensor:
    return apply(Op.EXP, (x,))


def log(x: Tensor) -> Tensor:
    return apply(Op.LOG, (x,))


def tanh(x: Tensor) -> Tensor:
    return apply(Op.TANH, (x,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return apply(Op.LEAKY_RELU, (x,), slope=slope)


def relu(x: Tensor) -> Tensor:
    return apply(Op.RELU, (x,))


def matmul(a: Tensor, b: TensorLike) -> Tensor:
    return apply(Op.MATMUL, _pair(a, b))


def conv2d(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """Same-padded 2D convolution; ``weight`` is (out, in, k, k) with k in {1, 3}"""
    return apply(Op.CONV2D, (x, as_tensor(weight, like=x)), stride=stride)


def conv_transpose2(x: Tensor, weight: Tensor) -> Tensor:
    """2x2 transposed convolution with stride 2; ``weight`` is (in, out, 2, 2)"""
    return apply(Op.CONV_TRANSPOSE2, (x, weight))


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    return apply(Op.BIAS_ADD, (x, bias))


def sum(x: Tensor, axis: Any = None) -> Tensor:  # noqa: A001
    return apply(Op.SUM, (x,), axis=axis)


def mean(x: Tensor, axis: Any = None) -> Tensor:
    return apply(Op.MEAN, (x,), axis=axis)


def slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    return apply(Op.SLICE, (x,), axis=axis, start=start, stop=stop)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if len(tensors) == 1:
        return tensors[0]
    return apply(Op.CONCAT, tuple(tensors), axis=axis)


def avg_pool2(x: Tensor) -> Tensor:
    return apply(Op.AVG_POOL2, (x,))


def upsample2(x: Tensor) -> Tensor:
    return apply(Op.UPSAMPLE2, (x,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return apply(Op.RESHAPE, (x,), shape=tuple(shape))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return apply(Op.TRANSPOSE, (x,), axes=tuple(axes))


def flatten(x: Tensor) -> Tensor:
    """Collapse all non-batch axes"""
    return reshape(x, (x.shape[0], -1))


def linear_map(
    x: Tensor,
    forward: Callable[[np.ndarray], np.ndarray],
    adjoint: Callable[[np.ndarray], np.ndarray],
) -> Tensor:
    """Apply a fixed linear operator given as forward/adjoint callables on batched arrays"""
    return apply(Op.LINEAR_MAP, (x,), forward=forward, adjoint=adjoint)


def sum_per_sample(x: Tensor) -> Tensor:
    """Sum every axis except the batch axis"""
    if x.ndim == 1:
        return x
    return sum(x, axis=tuple(range(1, x.ndim)))


def mse(a: Tensor, b: TensorLike) -> Tensor:
    """Mean squared error over all elements"""
    diff = sub(a, b)
    return mean(square(diff))
