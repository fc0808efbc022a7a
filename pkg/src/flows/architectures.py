"""
Flow models assembled from invertible layers

A FlowModel is an ordered list of steps. Layer steps apply an invertible
layer (optionally fed by a conditioning slot); split steps move channels to
the latent output or onto the skip stack; concat steps pull a skip back.
The latent vector is the concatenation of the early-split parts, flattened
in the order they were split off, followed by the flattened final tensor.
"""
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..engine import ParameterStore, Tensor, no_record, ops
from ..exceptions import NumericalError, ShapeError
from ..models.core import (
    ArchitectureKind,
    BaseKind,
    CondSlot,
    CouplingKind,
    DenseSpec,
    DownsampleKind,
    IUNetSpec,
    MultiScaleSpec,
    Partition,
    PermutationKind,
    coerce_enum,
)
from .base import BaseDistribution
from .couplings import CouplingLayer
from .interfaces import InvertibleLayer, Shape
from .rearrange import (
    DownsampleLayer,
    FlattenLayer,
    PermutationLayer,
    UpsampleLayer,
    space_to_depth,
)

logger = logging.getLogger(__name__)

Features = Optional[Sequence[Tensor]]


@dataclass
class LayerStep:
    layer: InvertibleLayer
    slot: Optional[int] = None
    squeeze: int = 0


@dataclass
class SplitStep:
    kept: int
    forwarded: int
    to_latent: bool = True


@dataclass
class ConcatStep:
    skip_channels: int


Step = Union[LayerStep, SplitStep, ConcatStep]


class FlowModel:
    """Whole-model forward, inverse and likelihood over a step list"""

    def __init__(
        self,
        kind: ArchitectureKind,
        input_shape: Shape,
        steps: List[Step],
        latent_layout: List[Shape],
        base: BaseDistribution,
        slots: List[CondSlot],
        params: ParameterStore,
        spec: Dict[str, Any],
    ):
        self.kind = kind
        self.input_shape = tuple(input_shape)
        self.steps = steps
        self.latent_layout = latent_layout
        self.base = base
        self.slots = slots
        self.params = params
        self.spec = spec
        self.dim = int(np.prod(self.input_shape))
        if sum(int(np.prod(s)) for s in latent_layout) != self.dim:
            raise ShapeError(kind.value, "latent layout does not preserve dimension")

    @property
    def conditional(self) -> bool:
        return bool(self.slots)

    @property
    def layers(self) -> List[InvertibleLayer]:
        return [step.layer for step in self.steps if isinstance(step, LayerStep)]

    @property
    def couplings(self) -> List[CouplingLayer]:
        return [layer for layer in self.layers if isinstance(layer, CouplingLayer)]

    def set_memory_efficient(self, enabled: bool) -> None:
        for layer in self.couplings:
            layer.memory_efficient = enabled

    def _features(self, step: LayerStep, h: Features) -> Optional[Tensor]:
        if step.slot is None:
            return None
        feature = h[step.slot]  # type: ignore[index]
        for _ in range(step.squeeze):
            feature = space_to_depth(feature)
        return feature

    def _check_inputs(self, x: Tensor, h: Features) -> None:
        if x.shape[1:] != self.input_shape:
            raise ShapeError(self.kind.value, f"expected per-sample shape {self.input_shape}, got {x.shape[1:]}")
        if self.conditional:
            if h is None or len(h) != len(self.slots):
                raise ValueError(f"Model expects {len(self.slots)} conditioning features")
            for slot, feature in zip(self.slots, h):
                expected = (slot.channels,) + (tuple(slot.extent) if slot.extent else ())
                if feature.shape[1:] != expected or feature.shape[0] != x.shape[0]:
                    raise ShapeError(f"slot {slot.index}", f"expected features {expected}, got {feature.shape[1:]}")
        elif h is not None and len(h):
            raise ValueError("Unconditional model received conditioning features")

    @staticmethod
    def _finite(index: int, *tensors: Tensor) -> None:
        for tensor in tensors:
            if not np.all(np.isfinite(tensor.data)):
                raise NumericalError("non-finite values in flow pass", layer_index=index)

    def forward(
        self,
        x: Tensor,
        h: Features = None,
        params: Optional[ParameterStore] = None,
        trace: Optional[List[Tensor]] = None,
    ) -> Tuple[Tensor, Tensor]:
        """x -> (z, logdet of x -> z); ``trace`` collects per-layer log-dets"""
        params = params if params is not None else self.params
        self._check_inputs(x, h)
        batch = x.shape[0]
        logdet = Tensor(np.zeros(batch, dtype=x.dtype))
        parts: List[Tensor] = []
        skips: List[Tensor] = []
        for index, step in enumerate(self.steps):
            if isinstance(step, LayerStep):
                x, layer_logdet = step.layer.forward(x, params, self._features(step, h))
                self._finite(index, x, layer_logdet)
                logdet = ops.add(logdet, layer_logdet)
                if trace is not None:
                    trace.append(layer_logdet)
            elif isinstance(step, SplitStep):
                forwarded = ops.slice(x, 1, step.kept, step.kept + step.forwarded)
                x = ops.slice(x, 1, 0, step.kept)
                (parts if step.to_latent else skips).append(forwarded)
            else:
                x = ops.concat([x, skips.pop()], axis=1)
        parts.append(x)
        z = ops.concat([ops.reshape(p, (batch, -1)) for p in parts], axis=1)
        return z, logdet

    def inverse(
        self,
        z: Tensor,
        h: Features = None,
        params: Optional[ParameterStore] = None,
    ) -> Tuple[Tensor, Tensor]:
        """z -> (x, logdet of z -> x)"""
        params = params if params is not None else self.params
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise ShapeError(self.kind.value, f"expected latent batch (B, {self.dim}), got {z.shape}")
        batch = z.shape[0]
        if self.conditional and (h is None or len(h) != len(self.slots)):
            raise ValueError(f"Model expects {len(self.slots)} conditioning features")

        parts: List[Tensor] = []
        offset = 0
        for shape in self.latent_layout:
            size = int(np.prod(shape))
            parts.append(ops.reshape(ops.slice(z, 1, offset, offset + size), (batch,) + tuple(shape)))
            offset += size

        x = parts.pop()
        logdet = Tensor(np.zeros(batch, dtype=z.dtype))
        skips: List[Tensor] = []
        for index in range(len(self.steps) - 1, -1, -1):
            step = self.steps[index]
            if isinstance(step, LayerStep):
                x, layer_logdet = step.layer.inverse(x, params, self._features(step, h))
                self._finite(index, x, layer_logdet)
                logdet = ops.add(logdet, layer_logdet)
            elif isinstance(step, SplitStep):
                forwarded = parts.pop() if step.to_latent else skips.pop()
                x = ops.concat([x, forwarded], axis=1)
            else:
                kept = x.shape[1] - step.skip_channels
                skips.append(ops.slice(x, 1, kept, x.shape[1]))
                x = ops.slice(x, 1, 0, kept)
        return x, logdet

    def log_likelihood(self, x: Tensor, h: Features = None, params: Optional[ParameterStore] = None) -> Tensor:
        """Per-sample log p(x | h) = log p_z(z) + logdet of x -> z"""
        z, logdet = self.forward(x, h, params)
        return ops.add(self.base.log_prob(z), logdet)

    def log_likelihood_from_latent(self, z: Tensor, h: Features = None, params: Optional[ParameterStore] = None) -> Tensor:
        """Same value computed from the z -> x direction: log p_z(z) - logdet of z -> x"""
        _, logdet_inverse = self.inverse(z, h, params)
        return ops.sub(self.base.log_prob(z), logdet_inverse)

    def sample(self, count: int, rng: np.random.Generator, h: Features = None,
               params: Optional[ParameterStore] = None) -> np.ndarray:
        z = Tensor(self.base.sample(count, rng), dtype=(params if params is not None else self.params).dtype)
        with no_record():
            x, _ = self.inverse(z, h, params)
        return x.data

    def round_trip_residual(self, x: Tensor, h: Features = None, params: Optional[ParameterStore] = None) -> float:
        """max |x - T^-1(T(x))| without recording"""
        with no_record():
            z, _ = self.forward(x, h, params)
            restored, _ = self.inverse(z, h, params)
        return float(np.max(np.abs(restored.data - x.data)))

    def describe(self) -> Dict[str, Any]:
        steps = []
        for index, step in enumerate(self.steps):
            if isinstance(step, LayerStep):
                entry = dict(step.layer.describe())
                entry.update({'step': index, 'slot': step.slot, 'squeeze': step.squeeze})
            elif isinstance(step, SplitStep):
                entry = {'step': index, 'type': 'split', 'kept': step.kept, 'forwarded': step.forwarded,
                         'target': 'latent' if step.to_latent else 'skip'}
            else:
                entry = {'step': index, 'type': 'concat', 'skip_channels': step.skip_channels}
            steps.append(entry)
        return {
            'architecture': self.kind.value,
            'input_shape': list(self.input_shape),
            'base': self.base.kind.value,
            'spec': self.spec,
            'latent_layout': [list(s) for s in self.latent_layout],
            'slots': [slot.to_dict() for slot in self.slots],
            'steps': steps,
        }

    def manifest(self) -> str:
        """Human-readable model manifest, one layer per line after a JSON header"""
        described = self.describe()
        lines = [
            f"architecture {described['architecture']}",
            f"input_shape {' '.join(str(n) for n in self.input_shape)}",
            f"base {described['base']}",
            f"latent_order {' | '.join('x'.join(str(n) for n in s) for s in self.latent_layout)}",
        ]
        for slot in self.slots:
            extent = 'flat' if slot.extent is None else f"{slot.extent[0]}x{slot.extent[1]}"
            lines.append(f"slot {slot.index} channels={slot.channels} extent={extent}")
        for entry in described['steps']:
            lines.append(f"step {json.dumps(entry, sort_keys=True)}")
        lines.append(f"spec {json.dumps(self.spec, sort_keys=True)}")
        return '\n'.join(lines) + '\n'


class _Builder:
    """Tracks the running per-sample shape while steps are appended"""

    def __init__(self, input_shape: Shape, params: ParameterStore, seed: int):
        self.input_shape: Shape = tuple(input_shape)
        self.shape: Shape = tuple(input_shape)
        self.params = params
        self.seed = seed
        self.steps: List[Step] = []
        self.latent_layout: List[Shape] = []
        self.skip_shapes: List[Shape] = []
        self.slots: Dict[int, CondSlot] = {}

    @property
    def name(self) -> str:
        return f"flow.{len(self.steps)}"

    def slot(self, index: int, channels: int, extent: Optional[Tuple[int, int]]) -> None:
        self.slots[index] = CondSlot(index=index, channels=channels, extent=extent)

    def layer(self, layer: InvertibleLayer, slot: Optional[int] = None, squeeze: int = 0) -> None:
        self.steps.append(LayerStep(layer, slot, squeeze))
        self.shape = tuple(layer.output_shape(self.shape))

    def coupling(
        self,
        kind: CouplingKind,
        clamp: Optional[float],
        hidden: int,
        slot: Optional[int] = None,
        squeeze: int = 0,
        kernel: int = 3,
        parity: int = 0,
        partition: Optional[Partition] = None,
    ) -> None:
        cond_channels = 0
        if slot is not None:
            cond_channels = self.slots[slot].channels * (4 ** squeeze)
        layer = CouplingLayer(
            self.name, self.params, self.shape, kind=kind, clamp=clamp, hidden=hidden,
            kernel=kernel, cond_channels=cond_channels, partition=partition, parity=parity,
        )
        self.layer(layer, slot, squeeze)

    def permutation(self, kind: PermutationKind) -> None:
        if self.shape[0] > 1:
            self.layer(PermutationLayer(self.name, self.shape[0], kind, seed=self.seed))

    def downsample(self, kind: DownsampleKind) -> None:
        self.layer(DownsampleLayer(self.name, kind))

    def upsample(self, kind: DownsampleKind) -> None:
        self.layer(UpsampleLayer(self.name, kind))

    def flatten(self) -> None:
        self.layer(FlattenLayer(self.name, self.shape))

    def split(self, forwarded: int, to_latent: bool = True) -> None:
        channels = self.shape[0]
        if not 0 < forwarded < channels:
            raise ValueError(f"Cannot forward {forwarded} of {channels} channels")
        kept = channels - forwarded
        forwarded_shape = (forwarded,) + tuple(self.shape[1:])
        self.steps.append(SplitStep(kept, forwarded, to_latent))
        if to_latent:
            self.latent_layout.append(forwarded_shape)
        else:
            self.skip_shapes.append(forwarded_shape)
        self.shape = (kept,) + tuple(self.shape[1:])

    def concat(self) -> None:
        skip = self.skip_shapes.pop()
        if skip[1:] != self.shape[1:]:
            raise ShapeError('concat', f"skip {skip} does not fit running shape {self.shape}")
        self.steps.append(ConcatStep(skip[0]))
        self.shape = (self.shape[0] + skip[0],) + tuple(self.shape[1:])

    def finish(self, kind: ArchitectureKind, base: BaseKind, spec: Dict[str, Any]) -> FlowModel:
        self.latent_layout.append(self.shape)
        dim = sum(int(np.prod(s)) for s in self.latent_layout)
        slots = [self.slots[i] for i in sorted(self.slots)]
        model = FlowModel(kind, self.input_shape, self.steps, self.latent_layout,
                          BaseDistribution(base, dim), slots, self.params, spec)
        logger.info(
            f"Built {kind.value} flow: {len(model.layers)} layers, latent dim {dim}, "
            f"{len(slots)} conditioning slots, {self.params.num_parameters()} parameters"
        )
        return model


def _require_divisible(shape: Shape, factor: int, kind: str) -> None:
    _, h, w = shape
    if h % factor or w % factor:
        raise ShapeError(kind, f"input extents {h}x{w} must be divisible by {factor}")


def build_multiscale(spec: MultiScaleSpec, params: Optional[ParameterStore] = None) -> FlowModel:
    """Per scale: couplings -> downsample -> couplings -> split (the last scale does not split)

    Scale i's couplings read conditioning slot i; after downsampling the same
    slot is rearranged by space-to-depth to the halved extent. With
    ``final_dense`` > 0 the remaining tensor is flattened and passed through
    dense couplings reading an extra flat slot.
    """
    params = params if params is not None else ParameterStore(seed=spec.seed)
    _require_divisible(spec.input_shape, 2 ** spec.scales, 'multiscale')
    builder = _Builder(spec.input_shape, params, spec.seed)
    conditional = spec.cond_channels > 0
    _, height, width = spec.input_shape

    for scale in range(spec.scales):
        slot = scale if conditional else None
        if conditional:
            builder.slot(scale, spec.cond_channels, (height >> scale, width >> scale))
        for half in range(2):
            for index in range(spec.couplings_per_block[scale]):
                if index:
                    builder.permutation(spec.permutation)
                builder.coupling(spec.coupling, spec.clamp, spec.hidden_channels,
                                 slot=slot, squeeze=half, parity=index)
            if half == 0:
                builder.downsample(spec.downsample[scale])
                builder.permutation(spec.permutation)
        fraction = spec.split_fraction[scale]
        if scale < spec.scales - 1 and fraction > 0:
            forwarded = int(round(builder.shape[0] * fraction))
            forwarded = min(max(forwarded, 1), builder.shape[0] - 1)
            builder.split(forwarded)

    if spec.final_dense:
        builder.flatten()
        flat_slot = None
        if conditional:
            flat_slot = spec.scales
            builder.slot(flat_slot, spec.cond_channels, None)
        for _ in range(spec.final_dense):
            builder.permutation(PermutationKind.SHUFFLE)
            builder.coupling(spec.coupling, spec.clamp, spec.hidden_channels, slot=flat_slot)

    return builder.finish(ArchitectureKind.MULTISCALE, spec.base, spec.to_dict())


def build_iunet(spec: IUNetSpec, params: Optional[ParameterStore] = None) -> FlowModel:
    """Down blocks coupling -> downsample -> split to skip; bottom coupling;
    up blocks concat skip -> upsample -> coupling. Scale i reads slot i on
    both paths."""
    params = params if params is not None else ParameterStore(seed=spec.seed)
    _require_divisible(spec.input_shape, 2 ** (spec.scales - 1), 'iunet')
    builder = _Builder(spec.input_shape, params, spec.seed)
    conditional = spec.cond_channels > 0
    _, height, width = spec.input_shape

    def couplings(scale: int) -> None:
        for index in range(spec.couplings_per_block):
            if index:
                builder.permutation(PermutationKind.ORTHOGONAL)
            builder.coupling(spec.coupling, spec.clamp, spec.hidden_channels,
                             slot=scale if conditional else None, parity=index)

    if conditional:
        for scale in range(spec.scales):
            builder.slot(scale, spec.cond_channels, (height >> scale, width >> scale))

    for scale in range(spec.scales - 1):
        couplings(scale)
        builder.downsample(spec.downsample)
        channels = builder.shape[0]
        forwarded = spec.skip_channels[scale] if spec.skip_channels else channels // 2
        builder.split(forwarded, to_latent=False)
    couplings(spec.scales - 1)
    for scale in range(spec.scales - 2, -1, -1):
        builder.concat()
        builder.upsample(spec.downsample)
        couplings(scale)

    return builder.finish(ArchitectureKind.IUNET, spec.base, spec.to_dict())


def build_cs_multiscale(
    repeats: int = 8,
    hidden: int = 32,
    dense_hidden: int = 256,
    cond_channels: int = 32,
    base: Union[BaseKind, str] = BaseKind.NORMAL,
    clamp: Optional[float] = 2.0,
    seed: int = 0,
    params: Optional[ParameterStore] = None,
) -> FlowModel:
    """Fixed compressed-sensing stack on 1x28x28 inputs

    Haar -> 4x14x14 section -> Haar -> 16x7x7 section -> flatten 784 ->
    656 dims to the latent, 128 kept -> 3 x (random permutation, dense
    affine coupling). A section is ``repeats`` x (coupling with 1x1 subnet,
    orthogonal mix, coupling with 3x3 subnet, orthogonal mix).
    """
    base = coerce_enum(BaseKind, base, 'base')
    params = params if params is not None else ParameterStore(seed=seed)
    input_shape = (1, 28, 28)
    builder = _Builder(input_shape, params, seed)
    conditional = cond_channels > 0
    if conditional:
        builder.slot(0, cond_channels, (14, 14))
        builder.slot(1, cond_channels, (7, 7))
        builder.slot(2, cond_channels, None)

    for level in range(2):
        builder.downsample(DownsampleKind.HAAR)
        slot = level if conditional else None
        for _ in range(repeats):
            builder.coupling(CouplingKind.AFFINE, clamp, hidden, slot=slot, kernel=1)
            builder.permutation(PermutationKind.ORTHOGONAL)
            builder.coupling(CouplingKind.AFFINE, clamp, hidden, slot=slot, kernel=3)
            builder.permutation(PermutationKind.ORTHOGONAL)

    builder.flatten()
    builder.split(656)
    for _ in range(3):
        builder.permutation(PermutationKind.SHUFFLE)
        builder.coupling(CouplingKind.AFFINE, clamp, dense_hidden, slot=2 if conditional else None)

    spec = {'repeats': repeats, 'hidden': hidden, 'dense_hidden': dense_hidden,
            'cond_channels': cond_channels, 'base': base.value, 'clamp': clamp, 'seed': seed}
    return builder.finish(ArchitectureKind.CS_APPENDIX, base, spec)


def build_dense(spec: DenseSpec, params: Optional[ParameterStore] = None) -> FlowModel:
    """Alternating random permutation and dense coupling on flat inputs"""
    params = params if params is not None else ParameterStore(seed=spec.seed)
    builder = _Builder((spec.dim,), params, spec.seed)
    slot = None
    if spec.cond_features:
        slot = 0
        builder.slot(0, spec.cond_features, None)
    for _ in range(spec.couplings):
        builder.permutation(PermutationKind.SHUFFLE)
        builder.coupling(spec.coupling, spec.clamp, spec.hidden, slot=slot)
    return builder.finish(ArchitectureKind.DENSE, spec.base, spec.to_dict())
