"""
Additive and affine coupling layers, optionally conditioned on features
"""
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..engine import ParameterStore, Tape, Tensor, active_tape, no_record, ops
from ..exceptions import ShapeError
from ..models.core import CouplingKind, Partition, coerce_enum
from .interfaces import InvertibleLayer, Shape
from .subnets import ConvSubnet, DenseSubnet

logger = logging.getLogger(__name__)


class _GradCollector(dict):
    """Minimal accumulator standing in for a ParameterStore during recomputation"""

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self[name] = self[name] + grad if name in self else grad


def checkerboard_mask(height: int, width: int, parity: int = 0) -> np.ndarray:
    """1 on pixels with (i + j + parity) even, shaped (1, 1, h, w)"""
    i, j = np.indices((height, width))
    return ((i + j + parity) % 2 == 0).astype(np.float64).reshape(1, 1, height, width)


class CouplingLayer(InvertibleLayer):
    """y_I1 = x_I1, y_I2 = x_I2 * exp(s_hat) + t  (affine) or x_I2 + t (additive)

    s and t come from one subnetwork applied to x_I1, concatenated with the
    conditioning features h when the layer is conditional. Affine scales are
    soft-clamped, s_hat = clamp * tanh(s / clamp); ``clamp=None`` disables it.

    Image inputs with two or more channels use the channel partition
    (I1 = first ceil(c/2) channels). Single-channel images use a spatial
    checkerboard; ``parity`` flips which pixels are passive.
    """

    def __init__(
        self,
        name: str,
        params: ParameterStore,
        shape: Sequence[int],
        kind: Union[CouplingKind, str] = CouplingKind.AFFINE,
        clamp: Optional[float] = 2.0,
        hidden: int = 32,
        kernel: int = 3,
        cond_channels: int = 0,
        partition: Optional[Union[Partition, str]] = None,
        parity: int = 0,
        memory_efficient: bool = False,
    ):
        self.name = name
        self.shape = tuple(int(n) for n in shape)
        self.kind = coerce_enum(CouplingKind, kind, 'coupling')
        self.clamp = clamp
        self.hidden = hidden
        self.kernel = kernel
        self.cond_channels = int(cond_channels)
        self.conditional = self.cond_channels > 0
        self.parity = parity % 2
        self.memory_efficient = memory_efficient
        self.flat = len(self.shape) == 1

        channels = self.shape[0]
        if partition is None:
            partition = Partition.CHECKERBOARD if (not self.flat and channels == 1) else Partition.CHANNEL
        self.partition = coerce_enum(Partition, partition, 'partition')
        if self.flat and self.partition == Partition.CHECKERBOARD:
            raise ValueError("Checkerboard partition needs an image input")
        if self.partition == Partition.CHANNEL and channels < 2:
            raise ValueError(f"Channel partition needs at least 2 channels, got {channels}")

        factor = 2 if self.kind == CouplingKind.AFFINE else 1
        if self.partition == Partition.CHANNEL:
            self.passive = (channels + 1) // 2
            self.active = channels - self.passive
            subnet_in, subnet_out = self.passive + self.cond_channels, factor * self.active
        else:
            self.passive = self.active = channels
            subnet_in, subnet_out = channels + self.cond_channels, factor * channels
            passive_mask = checkerboard_mask(self.shape[1], self.shape[2], self.parity)
            self._passive_mask = passive_mask
            self._active_mask = 1.0 - passive_mask

        if self.flat:
            self.subnet: Union[ConvSubnet, DenseSubnet] = DenseSubnet(
                f"{name}.subnet", params, subnet_in, hidden, subnet_out)
        else:
            self.subnet = ConvSubnet(f"{name}.subnet", params, subnet_in, hidden, subnet_out, kernel)

    @property
    def param_names(self) -> List[str]:  # type: ignore[override]
        return self.subnet.param_names

    def output_shape(self, input_shape: Shape) -> Shape:
        return tuple(input_shape)

    def describe(self) -> Dict[str, Any]:
        return {
            'type': 'coupling',
            'name': self.name,
            'kind': self.kind.value,
            'partition': self.partition.value,
            'parity': self.parity,
            'clamp': self.clamp,
            'kernel': None if self.flat else self.kernel,
            'hidden': self.hidden,
            'cond_channels': self.cond_channels,
            'shape': list(self.shape),
        }

    def _check(self, x: Tensor, h: Optional[Tensor]) -> None:
        if x.shape[1:] != self.shape:
            raise ShapeError(self.name, f"expected per-sample shape {self.shape}, got {x.shape[1:]}")
        if not self.conditional:
            if h is not None:
                raise ValueError(f"Coupling {self.name} is unconditional but received features")
            return
        if h is None:
            raise ValueError(f"Conditional coupling {self.name} needs conditioning features")
        if h.shape[0] != x.shape[0]:
            raise ShapeError(self.name, f"feature batch {h.shape[0]} does not match input batch {x.shape[0]}")
        if h.ndim != x.ndim or (not self.flat and h.shape[2:] != x.shape[2:]):
            raise ShapeError(self.name, f"feature extent {h.shape[1:]} does not match input extent {x.shape[1:]}")
        if h.shape[1] != self.cond_channels:
            raise ShapeError(self.name, f"expected {self.cond_channels} feature channels, got {h.shape[1]}")

    def _mask(self, mask: np.ndarray, like: Tensor) -> Tensor:
        return Tensor(mask, dtype=like.dtype)

    def _coefficients(self, passive: Tensor, params: ParameterStore, h: Optional[Tensor]) -> Tuple[Optional[Tensor], Tensor]:
        inputs = ops.concat([passive, h], axis=1) if h is not None else passive
        out = self.subnet(inputs, params)
        width = out.shape[1] // (2 if self.kind == CouplingKind.AFFINE else 1)
        if self.kind == CouplingKind.ADDITIVE:
            scale, shift = None, out
        else:
            scale = ops.slice(out, 1, 0, width)
            shift = ops.slice(out, 1, width, 2 * width)
            if self.clamp is not None:
                scale = ops.mul(ops.tanh(ops.mul(scale, 1.0 / self.clamp)), self.clamp)
        if self.partition == Partition.CHECKERBOARD:
            active = self._mask(self._active_mask, passive)
            shift = ops.mul(shift, active)
            if scale is not None:
                scale = ops.mul(scale, active)
        return scale, shift

    def _zeros(self, x: Tensor) -> Tensor:
        return Tensor(np.zeros(x.shape[0], dtype=x.dtype))

    def _split(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        if self.partition == Partition.CHECKERBOARD:
            return ops.mul(x, self._mask(self._passive_mask, x)), x
        return ops.slice(x, 1, 0, self.passive), ops.slice(x, 1, self.passive, self.passive + self.active)

    def _merge(self, passive: Tensor, active: Tensor) -> Tensor:
        if self.partition == Partition.CHECKERBOARD:
            return active
        return ops.concat([passive, active], axis=1)

    def _forward(self, x: Tensor, params: ParameterStore, h: Optional[Tensor]) -> Tuple[Tensor, Tensor]:
        passive, active = self._split(x)
        scale, shift = self._coefficients(passive, params, h)
        if scale is None:
            return self._merge(passive, ops.add(active, shift)), self._zeros(x)
        transformed = ops.add(ops.mul(active, ops.exp(scale)), shift)
        return self._merge(passive, transformed), ops.sum_per_sample(scale)

    def _inverse(self, y: Tensor, params: ParameterStore, h: Optional[Tensor]) -> Tuple[Tensor, Tensor]:
        passive, active = self._split(y)
        scale, shift = self._coefficients(passive, params, h)
        if scale is None:
            return self._merge(passive, ops.sub(active, shift)), self._zeros(y)
        restored = ops.mul(ops.sub(active, shift), ops.exp(ops.mul(scale, -1.0)))
        return self._merge(passive, restored), ops.mul(ops.sum_per_sample(scale), -1.0)

    def forward(self, x: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        self._check(x, h)
        tape = active_tape()
        if self.memory_efficient and tape is not None:
            return self._forward_recompute(x, params, h, tape)
        return self._forward(x, params, h)

    def inverse(self, y: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        self._check(y, h)
        return self._inverse(y, params, h)

    def _forward_recompute(
        self, x: Tensor, params: ParameterStore, h: Optional[Tensor], tape: Tape
    ) -> Tuple[Tensor, Tensor]:
        """Record one node whose backward rebuilds x from y instead of storing activations"""
        with no_record():
            y, logdet = self._forward(x, params, h)
        batch = x.shape[0]
        y_data = y.data
        width = y_data.size // batch
        packed = Tensor.wrap(np.concatenate([y_data.reshape(batch, -1), logdet.data.reshape(batch, 1)], axis=1))
        leaves = [params.tensor(name) for name in self.param_names]
        inputs: List[Tensor] = [x] + ([h] if h is not None else []) + leaves

        def backward(g: np.ndarray) -> List[Optional[np.ndarray]]:
            grad_y = g[:, :width].reshape(y_data.shape)
            grad_logdet = g[:, width]
            h_leaf = Tensor.wrap(h.data, requires_grad=True) if h is not None else None
            with no_record():
                x_again, _ = self._inverse(Tensor.wrap(y_data), params, h_leaf)
            x_leaf = Tensor.wrap(x_again.data, requires_grad=True)
            with Tape() as inner:
                y_again, logdet_again = self._forward(x_leaf, params, h_leaf)
                objective = ops.add(
                    ops.sum(ops.mul(y_again, grad_y)),
                    ops.sum(ops.mul(logdet_again, grad_logdet)),
                )
            collector = _GradCollector()
            inner.backward(objective, store=collector)
            grads: List[Optional[np.ndarray]] = [inner.grad(x_leaf)]
            if h_leaf is not None:
                grads.append(inner.grad(h_leaf))
            grads.extend(collector.get(name) for name in self.param_names)
            return grads

        if any(tape.is_tracked(t) for t in inputs):
            tape.record('coupling_recompute', inputs, packed, backward)
        y_out = ops.reshape(ops.slice(packed, 1, 0, width), y_data.shape)
        logdet_out = ops.reshape(ops.slice(packed, 1, width, width + 1), (batch,))
        return y_out, logdet_out
