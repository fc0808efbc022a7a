"""
Training objectives: negative log-likelihood and the conditional loss
"""
from typing import Optional, Union

import numpy as np

from ..engine import ParameterStore, Tensor, ops
from ..flows import FlowModel
from .networks import Conditioner

Batch = Union[Tensor, np.ndarray]


def _as_batch(x: Batch, params: ParameterStore) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=params.dtype)


def nll_loss(
    model: FlowModel,
    cond: Optional[Conditioner],
    x: Batch,
    y: Optional[np.ndarray] = None,
    params: Optional[ParameterStore] = None,
    inverted: Optional[np.ndarray] = None,
) -> Tensor:
    """Batch mean of -log p(x | y)"""
    params = params if params is not None else model.params
    x = _as_batch(x, params)
    if x.shape[0] == 0:
        raise ValueError("Loss needs a nonempty batch")
    features = cond.condition(y, params, inverted=inverted) if cond is not None else None
    return ops.mean(ops.mul(model.log_likelihood(x, features, params), -1.0))


def conditional_loss(
    model: FlowModel,
    cond: Optional[Conditioner],
    x: Batch,
    y: Optional[np.ndarray] = None,
    alpha: float = 0.0,
    params: Optional[ParameterStore] = None,
    inverted: Optional[np.ndarray] = None,
) -> Tensor:
    """-log p(x | y) + alpha * MSE(H(y), x), both batch means

    With alpha = 0 this is exactly ``nll_loss``; alpha > 0 needs a unet
    conditioner, whose single trunk pass feeds both terms.
    """
    if alpha < 0:
        raise ValueError(f"Conditional loss weight must be non-negative, got {alpha}")
    if alpha == 0:
        return nll_loss(model, cond, x, y, params, inverted)
    if cond is None or not cond.has_reconstruction:
        trunk = cond.trunk.value if cond is not None else 'none'
        raise ValueError(f"Conditional loss weight {alpha} requires a unet conditioner, got trunk {trunk}")
    params = params if params is not None else model.params
    x = _as_batch(x, params)
    if x.shape[0] == 0:
        raise ValueError("Loss needs a nonempty batch")
    features, reconstruction = cond.condition_with_reconstruction(y, params, inverted)
    nll = ops.mean(ops.mul(model.log_likelihood(x, features, params), -1.0))
    target = ops.reshape(x, reconstruction.shape)
    return ops.add(nll, ops.mul(ops.mse(reconstruction, target), alpha))
