"""
Primitive operations: eager forward rules, backward rules and recording

Each primitive is a pair of functions registered under an ``Op`` tag.
The forward rule receives the input arrays and returns ``(output, cache)``;
the backward rule receives the incoming gradient, the input arrays, the
output, the cache and a ``needs`` mask, and returns one gradient (or None)
per input.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import NumericalError, ShapeError
from .tensor import Tape, Tensor, active_tape, finite_checks_enabled

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01


class Op(Enum):
    """Primitive operation tags"""
    MATMUL = "matmul"
    CONV2D = "conv2d"
    CONV_TRANSPOSE2 = "conv_transpose2"
    LEAKY_RELU = "leaky_relu"
    RELU = "relu"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    EXP = "exp"
    LOG = "log"
    TANH = "tanh"
    SUM = "sum"
    MEAN = "mean"
    SLICE = "slice"
    CONCAT = "concat"
    AVG_POOL2 = "avg_pool2"
    UPSAMPLE2 = "upsample2"
    BIAS_ADD = "bias_add"
    RESHAPE = "reshape"
    TRANSPOSE = "transpose"
    LINEAR_MAP = "linear_map"


@dataclass(frozen=True)
class Rule:
    forward: Callable[..., Tuple[np.ndarray, Any]]
    backward: Callable[..., List[Optional[np.ndarray]]]
    arity: int


_RULES: Dict[Op, Rule] = {}


def register(op: Op, arity: int) -> Callable:
    """Decorator pairing a forward rule with its backward rule"""
    def decorator(forward: Callable) -> Callable:
        def attach(backward: Callable) -> Callable:
            _RULES[op] = Rule(forward=forward, backward=backward, arity=arity)
            return backward
        forward.backward = attach  # type: ignore[attr-defined]
        return forward
    return decorator


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: Op, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op.value, f"cannot broadcast {a.shape} with {b.shape}") from None


def _require_rank(op: Op, x: np.ndarray, rank: int, name: str = 'input') -> None:
    if x.ndim != rank:
        raise ShapeError(op.value, f"{name} must have rank {rank}, got shape {x.shape}")


def _normalize_axis(axis: Any, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# Linear algebra

@register(Op.MATMUL, 2)
def _matmul_forward(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Any]:
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', f"incompatible extents {a.shape} @ {b.shape}")
    return a @ b, None


@_matmul_forward.backward
def _matmul_backward(g, inputs, out, cache, needs):
    a, b = inputs
    ga = gb = None
    if b.ndim == 1:
        if needs[0]:
            ga = np.outer(g, b)
        if needs[1]:
            gb = a.T @ g
    else:
        if needs[0]:
            ga = g @ b.T
        if needs[1]:
            gb = a.T @ g
    return [ga, gb]


def _conv_windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


@register(Op.CONV2D, 2)
def _conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1) -> Tuple[np.ndarray, Any]:
    _require_rank(Op.CONV2D, x, 4)
    _require_rank(Op.CONV2D, w, 4, 'kernel')
    k = w.shape[-1]
    if k not in (1, 3) or w.shape[-2] != k:
        raise ShapeError('conv2d', f"kernel must be 1x1 or 3x3, got {w.shape[-2:]}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError('conv2d', f"kernel expects {w.shape[1]} channels, input has {x.shape[1]}")
    if stride not in (1, 2):
        raise ShapeError('conv2d', f"stride must be 1 or 2, got {stride}")
    if stride == 2 and (x.shape[2] % 2 or x.shape[3] % 2):
        raise ShapeError('conv2d', f"stride 2 needs even extents, got {x.shape[2:]}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    windows = _conv_windows(xp, k, stride)
    out = np.einsum('bchwij,ocij->bohw', windows, w, optimize=True)
    return out, xp


@_conv2d_forward.backward
def _conv2d_backward(g, inputs, out, xp, needs, stride=1):
    x, w = inputs
    k = w.shape[-1]
    pad = k // 2
    gx = gw = None
    if needs[1]:
        windows = _conv_windows(xp, k, stride)
        gw = np.einsum('bohw,bchwij->ocij', g, windows, optimize=True)
    if needs[0]:
        gwin = np.einsum('bohw,ocij->bchwij', g, w, optimize=True)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        h_out, w_out = g.shape[2], g.shape[3]
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += gwin[..., i, j]
        gx = gxp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]] if pad else gxp
    return [gx, gw]


@register(Op.CONV_TRANSPOSE2, 2)
def _conv_transpose2_forward(x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, Any]:
    _require_rank(Op.CONV_TRANSPOSE2, x, 4)
    if w.ndim != 4 or w.shape[2:] != (2, 2) or w.shape[0] != x.shape[1]:
        raise ShapeError('conv_transpose2', f"kernel {w.shape} does not fit input {x.shape}")
    b, _, h, wd = x.shape
    blocks = np.einsum('bchw,cokl->bohkwl', x, w, optimize=True)
    return blocks.reshape(b, w.shape[1], 2 * h, 2 * wd), None


@_conv_transpose2_forward.backward
def _conv_transpose2_backward(g, inputs, out, cache, needs):
    x, w = inputs
    b, o = g.shape[:2]
    blocks = g.reshape(b, o, x.shape[2], 2, x.shape[3], 2)
    gx = np.einsum('bohkwl,cokl->bchw', blocks, w, optimize=True) if needs[0] else None
    gw = np.einsum('bohkwl,bchw->cokl', blocks, x, optimize=True) if needs[1] else None
    return [gx, gw]


@register(Op.LINEAR_MAP, 1)
def _linear_map_forward(x: np.ndarray, forward: Callable = None, adjoint: Callable = None) -> Tuple[np.ndarray, Any]:
    return np.asarray(forward(x), dtype=x.dtype), None


@_linear_map_forward.backward
def _linear_map_backward(g, inputs, out, cache, needs, forward=None, adjoint=None):
    (x,) = inputs
    return [np.asarray(adjoint(g), dtype=x.dtype).reshape(x.shape)]


# Activations and pointwise maps

@register(Op.LEAKY_RELU, 1)
def _leaky_forward(x: np.ndarray, slope: float = LEAKY_SLOPE) -> Tuple[np.ndarray, Any]:
    return np.where(x > 0, x, x * x.dtype.type(slope)), None


@_leaky_forward.backward
def _leaky_backward(g, inputs, out, cache, needs, slope=LEAKY_SLOPE):
    (x,) = inputs
    return [np.where(x > 0, g, g * g.dtype.type(slope))]


@register(Op.RELU, 1)
def _relu_forward(x: np.ndarray) -> Tuple[np.ndarray, Any]:
    return np.maximum(x, 0), None


@_relu_forward.backward
def _relu_backward(g, inputs, out, cache, needs):
    (x,) = inputs
    return [np.where(x > 0, g, 0).astype(g.dtype)]


@register(Op.EXP, 1)
def _exp_forward(x: np.ndarray) -> Tuple[np.ndarray, Any]:
    with np.errstate(over='ignore'):
        return np.exp(x), None


@_exp_forward.backward
def _exp_backward(g, inputs, out, cache, needs):
    return [g * out]


@register(Op.LOG, 1)
def _log_forward(x: np.ndarray) -> Tuple[np.ndarray, Any]:
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.log(x), None


@_log_forward.backward
def _log_backward(g, inputs, out, cache, needs):
    (x,) = inputs
    with np.errstate(divide='ignore', invalid='ignore'):
        return [g / x]


@register(Op.TANH, 1)
def _tanh_forward(x: np.ndarray) -> Tuple[np.ndarray, Any]:
    return np.tanh(x), None


@_tanh_forward.backward
def _tanh_backward(g, inputs, out, cache, needs):
    return [g * (1 - out * out)]


# Elementwise binary

@register(Op.ADD, 2)
def _add_forward(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Any]:
    _broadcast_shape(Op.ADD, a, b)
    return a + b, None


@_add_forward.backward
def _add_backward(g, inputs, out, cache, needs):
    a, b = inputs
    return [
        unbroadcast(g, a.shape) if needs[0] else None,
        unbroadcast(g, b.shape) if needs[1] else None,
    ]


@register(Op.SUB, 2)
def _sub_forward(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Any]:
    _broadcast_shape(Op.SUB, a, b)
    return a - b, None


@_sub_forward.backward
def _sub_backward(g, inputs, out, cache, needs):
    a, b = inputs
    return [
        unbroadcast(g, a.shape) if needs[0] else None,
        unbroadcast(-g, b.shape) if needs[1] else None,
    ]


@register(Op.MUL, 2)
def _mul_forward(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Any]:
    _broadcast_shape(Op.MUL, a, b)
    return a * b, None


@_mul_forward.backward
def _mul_backward(g, inputs, out, cache, needs):
    a, b = inputs
    return [
        unbroadcast(g * b, a.shape) if needs[0] else None,
        unbroadcast(g * a, b.shape) if needs[1] else None,
    ]


@register(Op.BIAS_ADD, 2)
def _bias_add_forward(x: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, Any]:
    if bias.ndim != 1 or x.ndim < 2 or x.shape[1] != bias.shape[0]:
        raise ShapeError('bias_add', f"bias {bias.shape} does not match axis 1 of {x.shape}")
    return x + bias.reshape((1, -1) + (1,) * (x.ndim - 2)), None


@_bias_add_forward.backward
def _bias_add_backward(g, inputs, out, cache, needs):
    axes = tuple(i for i in range(g.ndim) if i != 1)
    return [g if needs[0] else None, g.sum(axis=axes) if needs[1] else None]


# Reductions

@register(Op.SUM, 1)
def _sum_forward(x: np.ndarray, axis: Any = None) -> Tuple[np.ndarray, Any]:
    return np.asarray(x.sum(axis=_normalize_axis(axis, x.ndim))), None


@_sum_forward.backward
def _sum_backward(g, inputs, out, cache, needs, axis=None):
    (x,) = inputs
    axes = _normalize_axis(axis, x.ndim)
    if axes is not None:
        g = np.expand_dims(g, axes)
    return [np.broadcast_to(g, x.shape)]


@register(Op.MEAN, 1)
def _mean_forward(x: np.ndarray, axis: Any = None) -> Tuple[np.ndarray, Any]:
    return np.asarray(x.mean(axis=_normalize_axis(axis, x.ndim))), None


@_mean_forward.backward
def _mean_backward(g, inputs, out, cache, needs, axis=None):
    (x,) = inputs
    axes = _normalize_axis(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    if axes is not None:
        g = np.expand_dims(g, axes)
    return [np.broadcast_to(g / g.dtype.type(count), x.shape)]


# Structural

@register(Op.SLICE, 1)
def _slice_forward(x: np.ndarray, axis: int = 0, start: int = 0, stop: int = 0) -> Tuple[np.ndarray, Any]:
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError('slice', f"range [{start}, {stop}) outside axis {axis} of extent {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return x[tuple(index)], None


@_slice_forward.backward
def _slice_backward(g, inputs, out, cache, needs, axis=0, start=0, stop=0):
    (x,) = inputs
    axis = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (start, x.shape[axis] - stop)
    return [np.pad(g, widths)]


@register(Op.CONCAT, -1)
def _concat_forward(*arrays: np.ndarray, axis: int = 0) -> Tuple[np.ndarray, Any]:
    ndim = arrays[0].ndim
    axis = axis % ndim
    for other in arrays[1:]:
        if other.ndim != ndim or any(
            other.shape[i] != arrays[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError('concat', f"cannot join {arrays[0].shape} and {other.shape} along axis {axis}")
    return np.concatenate(arrays, axis=axis), None


@_concat_forward.backward
def _concat_backward(g, inputs, out, cache, needs, axis=0):
    axis = axis % g.ndim
    bounds = np.cumsum([a.shape[axis] for a in inputs])[:-1]
    parts = np.split(g, bounds, axis=axis)
    return [part if need else None for part, need in zip(parts, needs)]


@register(Op.AVG_POOL2, 1)
def _avg_pool_forward(x: np.ndarray) -> Tuple[np.ndarray, Any]:
    _require_rank(Op.AVG_POOL2, x, 4)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError('avg_pool2', f"extents must be even, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)), None


@_avg_pool_forward.backward
def _avg_pool_backward(g, inputs, out, cache, needs):
    spread = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
    return [spread * g.dtype.type(0.25)]


@register(Op.UPSAMPLE2, 1)
def _upsample_forward(x: np.ndarray) -> Tuple[np.ndarray, Any]:
    _require_rank(Op.UPSAMPLE2, x, 4)
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3), None


@_upsample_forward.backward
def _upsample_backward(g, inputs, out, cache, needs):
    b, c, h, w = g.shape
    return [g.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))]


@register(Op.RESHAPE, 1)
def _reshape_forward(x: np.ndarray, shape: Tuple[int, ...] = ()) -> Tuple[np.ndarray, Any]:
    try:
        return x.reshape(shape), None
    except ValueError:
        raise ShapeError('reshape', f"cannot reshape {x.shape} into {tuple(shape)}") from None


@_reshape_forward.backward
def _reshape_backward(g, inputs, out, cache, needs, shape=()):
    return [g.reshape(inputs[0].shape)]


@register(Op.TRANSPOSE, 1)
def _transpose_forward(x: np.ndarray, axes: Tuple[int, ...] = ()) -> Tuple[np.ndarray, Any]:
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError('transpose', f"axes {tuple(axes)} are not a permutation for rank {x.ndim}")
    return np.transpose(x, axes), None


@_transpose_forward.backward
def _transpose_backward(g, inputs, out, cache, needs, axes=()):
    return [np.transpose(g, np.argsort(axes))]


def rule(op: Op) -> Rule:
    return _RULES[op]


def apply(op: Op, inputs: Sequence[Tensor], **attrs: Any) -> Tensor:
    """Evaluate a primitive eagerly and record it on the active tape"""
    spec = _RULES[op]
    if spec.arity >= 0 and len(inputs) != spec.arity:
        raise ShapeError(op.value, f"expected {spec.arity} inputs, got {len(inputs)}")
    arrays = tuple(t.data for t in inputs)
    out, cache = spec.forward(*arrays, **attrs)
    out = np.asarray(out)
    if finite_checks_enabled() and not np.all(np.isfinite(out)):
        raise NumericalError(f"{op.value} produced non-finite values")
    output = Tensor.wrap(out)

    tape: Optional[Tape] = active_tape()
    if tape is not None:
        needs = tuple(tape.is_tracked(t) for t in inputs)
        if any(needs):
            def backward(g: np.ndarray) -> List[Optional[np.ndarray]]:
                return spec.backward(g, arrays, out, cache, needs, **attrs)
            tape.record(op.value, inputs, output, backward)
    return output
