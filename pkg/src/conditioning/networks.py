"""
Conditioning networks

A conditioner maps measurements y through the operator's fixed
approximate inverse (the inversion layer) and a trainable trunk to one
feature tensor per conditioning slot of a flow model. Trunks build a
feature pyramid at extents H, H/2, H/4, ...; a 1x1 head per image slot
picks the level whose extent matches the slot, and flat slots read the
flattened coarsest level through a dense head.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..engine import ParameterStore, Tensor, ops
from ..exceptions import ShapeError
from ..models.core import CondSlot, ConditionerSpec, TrunkKind
from ..operators import MeasurementModel

logger = logging.getLogger(__name__)

PREFIX = 'cond'


class _Conv:
    def __init__(self, params: ParameterStore, name: str, in_channels: int, out_channels: int,
                 kernel: int = 3, stride: int = 1, zero: bool = False):
        self.name = name
        self.stride = stride
        params.create(f"{name}.weight", (out_channels, in_channels, kernel, kernel),
                      init='zeros' if zero else 'he', fan_in=in_channels * kernel * kernel)
        params.create(f"{name}.bias", (out_channels,), init='zeros')

    def __call__(self, x: Tensor, params: ParameterStore) -> Tensor:
        out = ops.conv2d(x, params.tensor(f"{self.name}.weight"), stride=self.stride)
        return ops.bias_add(out, params.tensor(f"{self.name}.bias"))


class _UpConv:
    def __init__(self, params: ParameterStore, name: str, in_channels: int, out_channels: int):
        self.name = name
        params.create(f"{name}.weight", (in_channels, out_channels, 2, 2), init='he', fan_in=in_channels)
        params.create(f"{name}.bias", (out_channels,), init='zeros')

    def __call__(self, x: Tensor, params: ParameterStore) -> Tensor:
        out = ops.conv_transpose2(x, params.tensor(f"{self.name}.weight"))
        return ops.bias_add(out, params.tensor(f"{self.name}.bias"))


class _Dense:
    def __init__(self, params: ParameterStore, name: str, in_features: int, out_features: int):
        self.name = name
        params.create(f"{name}.weight", (in_features, out_features), init='he', fan_in=in_features)
        params.create(f"{name}.bias", (out_features,), init='zeros')

    def __call__(self, x: Tensor, params: ParameterStore) -> Tensor:
        return ops.bias_add(ops.matmul(x, params.tensor(f"{self.name}.weight")), params.tensor(f"{self.name}.bias"))


class _ResBlock:
    def __init__(self, params: ParameterStore, name: str, channels: int):
        self.first = _Conv(params, f"{name}.conv1", channels, channels)
        self.second = _Conv(params, f"{name}.conv2", channels, channels)

    def __call__(self, x: Tensor, params: ParameterStore) -> Tensor:
        inner = self.second(ops.leaky_relu(self.first(x, params)), params)
        return ops.leaky_relu(ops.add(x, inner))


class Conditioner:
    """Inversion layer + trunk + per-slot heads; parameters live under ``cond.``"""

    def __init__(
        self,
        spec: ConditionerSpec,
        operator: MeasurementModel,
        slots: Sequence[CondSlot],
        params: ParameterStore,
    ):
        if not slots:
            raise ValueError("Conditioner needs at least one conditioning slot")
        self.spec = spec
        self.operator = operator
        self.slots = list(slots)
        self.params = params
        self.image_shape = tuple(operator.image_shape)
        self.trunk = spec.trunk
        self.flat_input = len(self.image_shape) == 1

        if self.flat_input != (self.trunk == TrunkKind.DENSE):
            raise ValueError(
                f"Trunk {self.trunk.value} does not fit inversion output of shape {self.image_shape}"
            )
        if self.flat_input and any(not slot.flat for slot in self.slots):
            raise ValueError("Dense trunk can only feed flat conditioning slots")

        self.levels = self._levels()
        self._build()
        if spec.frozen:
            params.freeze(f"{PREFIX}.")
        logger.info(
            f"Built {self.trunk.value} conditioner: {len(self.slots)} slots, "
            f"{len(self.levels)} pyramid levels, frozen={spec.frozen}"
        )

    @property
    def has_reconstruction(self) -> bool:
        return self.trunk == TrunkKind.UNET

    @property
    def param_names(self) -> List[str]:
        return self.params.names(f"{PREFIX}.")

    def _levels(self) -> List[Tuple[int, int]]:
        if self.flat_input:
            return []
        height, width = self.image_shape
        depth = 0
        for slot in self.slots:
            if slot.flat:
                continue
            level = 0
            while (height >> level, width >> level) != tuple(slot.extent) and (height >> level) > 0:
                level += 1
            if (height >> level) == 0 or height % (1 << level) or width % (1 << level):
                raise ShapeError('conditioner', f"slot extent {slot.extent} is not a halving of {self.image_shape}")
            depth = max(depth, level)
        return [(height >> level, width >> level) for level in range(depth + 1)]

    def _build(self) -> None:
        params = self.params
        spec = self.spec
        channels = spec.channels
        if self.trunk == TrunkKind.DENSE:
            self.input_layer = _Dense(params, f"{PREFIX}.trunk.fc1", self.image_shape[0], spec.hidden)
            self.hidden_layer = _Dense(params, f"{PREFIX}.trunk.fc2", spec.hidden, spec.hidden)
            pooled = spec.hidden
        else:
            depth = len(self.levels)
            self.stem = _Conv(params, f"{PREFIX}.trunk.stem", 1, channels)
            if self.trunk == TrunkKind.CNN:
                self.blocks = [_Conv(params, f"{PREFIX}.trunk.block{i}", channels, channels) for i in range(depth)]
            elif self.trunk == TrunkKind.RESNET:
                self.blocks = [_ResBlock(params, f"{PREFIX}.trunk.res{i}", channels) for i in range(depth)]
                self.strided = [
                    _Conv(params, f"{PREFIX}.trunk.down{i}", channels, channels, stride=2) for i in range(1, depth)
                ]
            elif self.trunk == TrunkKind.UNET:
                self.encoder = [_Conv(params, f"{PREFIX}.trunk.enc{i}", channels, channels) for i in range(depth)]
                self.up = [_UpConv(params, f"{PREFIX}.trunk.up{i}", channels, channels) for i in range(depth - 1)]
                self.decoder = [
                    _Conv(params, f"{PREFIX}.trunk.dec{i}", 2 * channels, channels) for i in range(depth - 1)
                ]
                self.reconstruction_head = _Conv(params, f"{PREFIX}.recon", channels, 1, kernel=1, zero=True)
            height, width = self.levels[-1]
            pooled = channels * height * width

        self.heads: Dict[int, Union[_Conv, _Dense]] = {}
        for slot in self.slots:
            name = f"{PREFIX}.head{slot.index}"
            if slot.flat:
                self.heads[slot.index] = _Dense(params, name, pooled, slot.channels)
            else:
                self.heads[slot.index] = _Conv(params, name, channels, slot.channels, kernel=1)

    def invert(self, y: np.ndarray) -> np.ndarray:
        """Fixed inversion layer A^dagger y for a batch, shaped as trunk input"""
        batch = self.operator.check_measurements(y)
        inverted = np.asarray(self.operator.approximate_inverse(batch), dtype=np.float64)
        if self.flat_input:
            return inverted.reshape(batch.shape[0], -1)
        return inverted.reshape((batch.shape[0], 1) + self.image_shape)

    def _input(self, y: Optional[np.ndarray], inverted: Optional[np.ndarray], params: ParameterStore) -> Tensor:
        if inverted is None:
            if y is None:
                raise ValueError("Conditioner needs measurements or their inversion")
            inverted = self.invert(y)
        return Tensor(inverted, dtype=params.dtype)

    def _pyramid(self, source: Tensor, params: ParameterStore) -> List[Tensor]:
        if self.trunk == TrunkKind.DENSE:
            hidden = ops.leaky_relu(self.input_layer(source, params))
            return [ops.leaky_relu(self.hidden_layer(hidden, params))]

        x = ops.leaky_relu(self.stem(source, params))
        depth = len(self.levels)
        pyramid: List[Tensor] = []
        if self.trunk == TrunkKind.AVG_POOL:
            for level in range(depth):
                if level:
                    x = ops.avg_pool2(x)
                pyramid.append(x)
        elif self.trunk == TrunkKind.CNN:
            for level in range(depth):
                if level:
                    x = ops.avg_pool2(x)
                x = ops.leaky_relu(self.blocks[level](x, params))
                pyramid.append(x)
        elif self.trunk == TrunkKind.RESNET:
            for level in range(depth):
                if level:
                    x = ops.leaky_relu(self.strided[level - 1](x, params))
                x = self.blocks[level](x, params)
                pyramid.append(x)
        else:
            skips: List[Tensor] = []
            for level in range(depth):
                if level:
                    x = ops.avg_pool2(x)
                x = ops.leaky_relu(self.encoder[level](x, params))
                skips.append(x)
            # decoder runs coarse to fine; pyramid[i] is the decoder activation at level i
            pyramid = [x]
            for level in range(depth - 2, -1, -1):
                up = ops.leaky_relu(self.up[level](x, params))
                x = ops.leaky_relu(self.decoder[level](ops.concat([up, skips[level]], axis=1), params))
                pyramid.insert(0, x)
        return pyramid

    def _heads(self, pyramid: List[Tensor], params: ParameterStore) -> List[Tensor]:
        features = []
        for slot in self.slots:
            head = self.heads[slot.index]
            if slot.flat:
                source = pyramid[-1]
                features.append(head(ops.flatten(source) if source.ndim > 2 else source, params))
            else:
                level = self.levels.index(tuple(slot.extent))
                features.append(head(pyramid[level], params))
        return features

    def condition(
        self,
        y: Optional[np.ndarray] = None,
        params: Optional[ParameterStore] = None,
        inverted: Optional[np.ndarray] = None,
    ) -> List[Tensor]:
        """Per-slot features h = H(y); pass ``inverted`` to reuse a cached inversion"""
        params = params if params is not None else self.params
        source = self._input(y, inverted, params)
        return self._heads(self._pyramid(source, params), params)

    def condition_with_reconstruction(
        self,
        y: Optional[np.ndarray] = None,
        params: Optional[ParameterStore] = None,
        inverted: Optional[np.ndarray] = None,
    ) -> Tuple[List[Tensor], Tensor]:
        """Features and the unet reconstruction from one trunk pass"""
        if not self.has_reconstruction:
            raise ValueError(f"Trunk {self.trunk.value} has no reconstruction head (requires unet)")
        params = params if params is not None else self.params
        source = self._input(y, inverted, params)
        pyramid = self._pyramid(source, params)
        reconstruction = ops.add(source, self.reconstruction_head(pyramid[0], params))
        return self._heads(pyramid, params), reconstruction

    def reconstruction(
        self,
        y: Optional[np.ndarray] = None,
        params: Optional[ParameterStore] = None,
        inverted: Optional[np.ndarray] = None,
    ) -> Tensor:
        return self.condition_with_reconstruction(y, params, inverted)[1]

    def describe(self) -> Dict[str, object]:
        return {
            'spec': self.spec.to_dict(),
            'operator': self.operator.describe(),
            'slots': [slot.to_dict() for slot in self.slots],
            'levels': [list(level) for level in self.levels],
        }


def condition(cond: Conditioner, y: np.ndarray, params: Optional[ParameterStore] = None) -> List[Tensor]:
    return cond.condition(y, params)


def conditioner_reconstruction(cond: Conditioner, y: np.ndarray, params: Optional[ParameterStore] = None) -> Tensor:
    """Image-domain output A^dagger y + head(decoder); unet trunks only"""
    return cond.reconstruction(y, params)
