"""
Core data models for flowrecon
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np


class BaseKind(Enum):
    """Latent base distribution"""
    NORMAL = "standard-normal"
    RADIAL = "radial-gaussian"


class CouplingKind(Enum):
    """Coupling law"""
    ADDITIVE = "additive"
    AFFINE = "affine"


class DownsampleKind(Enum):
    """Invertible 2x spatial downsampling"""
    CHECKERBOARD = "checkerboard"
    HAAR = "haar"


class PermutationKind(Enum):
    """Fixed channel mixing between couplings"""
    SHUFFLE = "random-shuffle"
    ORTHOGONAL = "fixed-orthogonal-mix"


class Partition(Enum):
    """How a coupling splits its input into the passive and active parts"""
    CHANNEL = "channel"
    CHECKERBOARD = "checkerboard"


class ArchitectureKind(Enum):
    MULTISCALE = "multiscale"
    IUNET = "iunet"
    CS_APPENDIX = "cs-appendix"
    DENSE = "dense"


class TrunkKind(Enum):
    """Conditioner trunk"""
    AVG_POOL = "avg-pool"
    CNN = "cnn"
    RESNET = "resnet"
    UNET = "unet"
    DENSE = "dense"


class ProblemKind(Enum):
    CS = "cs"
    CT = "ct"
    MRI = "mri"
    TOY2D = "toy2d"


class InversionKind(Enum):
    """Model-based inversion layer in front of a conditioner"""
    PSEUDO_INVERSE = "pseudo-inverse"
    TV = "tv"
    FBP = "fbp"
    ZERO_FILLED = "zero-filled"
    ADJOINT = "adjoint"


class NoiseMode(Enum):
    """Reading of 'relative noise level'"""
    RELATIVE = "relative"
    COMPONENTWISE = "componentwise"


class RangeMode(Enum):
    """Data range L used by PSNR/SSIM"""
    MAX_MIN = "max-min"
    EXTERNAL = "external"


class PhantomKind(Enum):
    ELLIPSES = "ellipses"
    SHAPES = "shapes"
    DIGITS_LIKE = "digits-like"
    GAUSSIAN_MIXTURE_2D = "gaussian-mixture-2d"
    LINEAR_GAUSSIAN = "linear-gaussian"


E = TypeVar('E', bound=Enum)


def coerce_enum(enum_type: Type[E], value: Union[E, str], field_name: str) -> E:
    """Accept an enum member or its string value"""
    if isinstance(value, enum_type):
        return value
    if isinstance(value, str):
        try:
            return enum_type(value.strip().lower())
        except ValueError:
            allowed = ', '.join(member.value for member in enum_type)
            raise ValueError(f"Invalid {field_name}: {value} (expected one of: {allowed})") from None
    raise ValueError(f"{field_name} must be a {enum_type.__name__}")


def validate_positive_int(value: Any, field_name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValueError(f"{field_name} must be an integer")
    if value < 1:
        raise ValueError(f"{field_name} must be positive, got {value}")
    return int(value)


def validate_non_negative(value: Any, field_name: str) -> float:
    if not isinstance(value, (int, float, np.floating)) or isinstance(value, bool):
        raise ValueError(f"{field_name} must be a number")
    if value < 0:
        raise ValueError(f"{field_name} cannot be negative")
    return float(value)


def validate_image_shape(shape: Sequence[int], field_name: str = 'input_shape') -> Tuple[int, int, int]:
    shape = tuple(int(n) for n in shape)
    if len(shape) != 3:
        raise ValueError(f"{field_name} must be (channels, height, width), got {shape}")
    for n in shape:
        validate_positive_int(n, field_name)
    return shape  # type: ignore[return-value]


def per_scale(value: Union[int, float, Sequence], scales: int, field_name: str) -> Tuple:
    """Broadcast a scalar setting to every scale"""
    if isinstance(value, (int, float)):
        return tuple([value] * scales)
    value = tuple(value)
    if len(value) != scales:
        raise ValueError(f"{field_name} needs {scales} entries, got {len(value)}")
    return value


@dataclass(frozen=True)
class CondSlot:
    """Conditioning input consumed by one or more flow layers

    Image slots have ``extent`` (h, w); flat slots have ``extent`` None and
    deliver a feature vector of length ``channels``.
    """
    index: int
    channels: int
    extent: Optional[Tuple[int, int]]

    @property
    def flat(self) -> bool:
        return self.extent is None

    def to_dict(self) -> Dict[str, Any]:
        return {'index': self.index, 'channels': self.channels, 'extent': list(self.extent) if self.extent else None}


@dataclass
class TrainConfig:
    """Optimisation settings for maximum-likelihood training"""
    learning_rate: float = 1e-4
    plateau_factor: float = 0.8
    plateau_patience: int = 5
    early_stop_patience: int = 10
    batch_size: int = 32
    epochs: int = 50
    dequantize: bool = False
    dequantization_variance: float = 0.005
    conditional_weight: float = 0.0
    seed: int = 0
    validation_fraction: float = 0.1
    stability_threshold: float = 1e-2
    memory_efficient: bool = False
    max_steps_per_epoch: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.learning_rate, (int, float)) or self.learning_rate <= 0:
            raise ValueError("Learning rate must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("Plateau factor must lie strictly between 0 and 1")
        self.plateau_patience = validate_positive_int(self.plateau_patience, 'plateau_patience')
        self.early_stop_patience = validate_positive_int(self.early_stop_patience, 'early_stop_patience')
        self.batch_size = validate_positive_int(self.batch_size, 'batch_size')
        self.epochs = validate_positive_int(self.epochs, 'epochs')
        self.dequantization_variance = validate_non_negative(self.dequantization_variance, 'dequantization_variance')
        self.conditional_weight = validate_non_negative(self.conditional_weight, 'conditional_weight')
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("Validation fraction must lie in [0, 1)")
        if self.stability_threshold <= 0:
            raise ValueError("Stability threshold must be positive")
        if self.max_steps_per_epoch is not None:
            self.max_steps_per_epoch = validate_positive_int(self.max_steps_per_epoch, 'max_steps_per_epoch')

    @property
    def effective_noise_variance(self) -> float:
        return self.dequantization_variance if self.dequantize else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'learning_rate': self.learning_rate,
            'plateau_factor': self.plateau_factor,
            'plateau_patience': self.plateau_patience,
            'early_stop_patience': self.early_stop_patience,
            'batch_size': self.batch_size,
            'epochs': self.epochs,
            'dequantize': self.dequantize,
            'dequantization_variance': self.dequantization_variance,
            'conditional_weight': self.conditional_weight,
            'seed': self.seed,
            'validation_fraction': self.validation_fraction,
            'stability_threshold': self.stability_threshold,
            'memory_efficient': self.memory_efficient,
            'max_steps_per_epoch': self.max_steps_per_epoch,
        }


@dataclass
class PosteriorSummary:
    """N posterior samples with their conditional mean and pixelwise std (1/N convention)"""
    samples: np.ndarray
    mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    std: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim < 1 or self.samples.shape[0] < 1:
            raise ValueError("Posterior summary needs at least one sample")
        if self.mean is None:
            self.mean = self.samples.mean(axis=0)
        if self.std is None:
            self.std = self.samples.std(axis=0)
        if self.mean.shape != self.samples.shape[1:] or self.std.shape != self.samples.shape[1:]:
            raise ValueError("Mean and std must have the shape of a single sample")

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])

    def combined(self, reconstruction: np.ndarray, weight: float) -> np.ndarray:
        """Convex combination of the posterior mean with a conditioner reconstruction"""
        if not 0 <= weight <= 1:
            raise ValueError("Combination weight must lie in [0, 1]")
        return (1 - weight) * self.mean + weight * np.asarray(reconstruction, dtype=self.mean.dtype)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'count': self.count,
            'shape': list(self.samples.shape[1:]),
            'mean_of_std': float(self.std.mean()),
        }


@dataclass
class SamplingMask:
    """Column selection over k-space width"""
    columns: np.ndarray
    center_fraction: float = 0.08
    acceleration: int = 4
    seed: int = 0

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=bool)
        if self.columns.ndim != 1:
            raise ValueError("Mask columns must be a 1-D boolean vector")
        if not self.columns.any():
            raise ValueError("Mask must select at least one column")

    @property
    def width(self) -> int:
        return int(self.columns.size)

    @property
    def selected(self) -> int:
        return int(self.columns.sum())

    @property
    def selected_fraction(self) -> float:
        return self.selected / self.width

    def to_text(self) -> str:
        return ''.join('1' if c else '0' for c in self.columns) + '\n'

    @classmethod
    def from_text(cls, text: str, **kwargs: Any) -> 'SamplingMask':
        line = text.strip()
        if not line or set(line) - {'0', '1'}:
            raise ValueError("Mask text must be a single line of 0/1 characters")
        return cls(columns=np.array([c == '1' for c in line]), **kwargs)


@dataclass
class MultiScaleSpec:
    """Multi-scale architecture: per scale coupling -> downsample -> coupling -> split"""
    input_shape: Tuple[int, int, int]
    scales: int = 2
    couplings_per_block: Union[int, Sequence[int]] = 2
    downsample: Union[DownsampleKind, Sequence[DownsampleKind], str] = DownsampleKind.HAAR
    split_fraction: Union[float, Sequence[float]] = 0.5
    final_dense: int = 0
    coupling: Union[CouplingKind, str] = CouplingKind.AFFINE
    clamp: Optional[float] = 2.0
    permutation: Union[PermutationKind, str] = PermutationKind.ORTHOGONAL
    hidden_channels: int = 32
    cond_channels: int = 0
    base: Union[BaseKind, str] = BaseKind.NORMAL
    seed: int = 0

    def __post_init__(self):
        self.input_shape = validate_image_shape(self.input_shape)
        self.scales = validate_positive_int(self.scales, 'scales')
        self.couplings_per_block = per_scale(self.couplings_per_block, self.scales, 'couplings_per_block')
        for count in self.couplings_per_block:
            validate_positive_int(count, 'couplings_per_block')
        if isinstance(self.downsample, (str, DownsampleKind)):
            self.downsample = [self.downsample] * self.scales
        self.downsample = tuple(coerce_enum(DownsampleKind, d, 'downsample') for d in per_scale(
            list(self.downsample), self.scales, 'downsample'))
        # the last entry is unused, the final scale does not split
        self.split_fraction = per_scale(self.split_fraction, self.scales, 'split_fraction')
        for fraction in self.split_fraction:
            if not 0 <= fraction < 1:
                raise ValueError("Split fraction must lie in [0, 1)")
        if self.final_dense < 0:
            raise ValueError("final_dense cannot be negative")
        self.coupling = coerce_enum(CouplingKind, self.coupling, 'coupling')
        self.permutation = coerce_enum(PermutationKind, self.permutation, 'permutation')
        self.base = coerce_enum(BaseKind, self.base, 'base')
        self.hidden_channels = validate_positive_int(self.hidden_channels, 'hidden_channels')
        if self.cond_channels < 0:
            raise ValueError("cond_channels cannot be negative")
        if self.clamp is not None and self.clamp <= 0:
            raise ValueError("Clamp must be positive or None")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'input_shape': list(self.input_shape),
            'scales': self.scales,
            'couplings_per_block': list(self.couplings_per_block),
            'downsample': [d.value for d in self.downsample],
            'split_fraction': list(self.split_fraction),
            'final_dense': self.final_dense,
            'coupling': self.coupling.value,
            'clamp': self.clamp,
            'permutation': self.permutation.value,
            'hidden_channels': self.hidden_channels,
            'cond_channels': self.cond_channels,
            'base': self.base.value,
            'seed': self.seed,
        }


@dataclass
class IUNetSpec:
    """Invertible UNet: down blocks split skips, up blocks merge them back"""
    input_shape: Tuple[int, int, int]
    scales: int = 3
    couplings_per_block: int = 1
    coupling: Union[CouplingKind, str] = CouplingKind.ADDITIVE
    clamp: Optional[float] = 2.0
    downsample: Union[DownsampleKind, str] = DownsampleKind.HAAR
    skip_channels: Optional[Sequence[int]] = None
    hidden_channels: int = 32
    cond_channels: int = 0
    base: Union[BaseKind, str] = BaseKind.NORMAL
    seed: int = 0

    def __post_init__(self):
        self.input_shape = validate_image_shape(self.input_shape)
        self.scales = validate_positive_int(self.scales, 'scales')
        self.couplings_per_block = validate_positive_int(self.couplings_per_block, 'couplings_per_block')
        self.coupling = coerce_enum(CouplingKind, self.coupling, 'coupling')
        self.downsample = coerce_enum(DownsampleKind, self.downsample, 'downsample')
        self.base = coerce_enum(BaseKind, self.base, 'base')
        self.hidden_channels = validate_positive_int(self.hidden_channels, 'hidden_channels')
        if self.skip_channels is not None:
            self.skip_channels = tuple(int(c) for c in self.skip_channels)
            if len(self.skip_channels) != self.scales - 1:
                raise ValueError(f"skip_channels needs {self.scales - 1} entries, got {len(self.skip_channels)}")
        if self.clamp is not None and self.clamp <= 0:
            raise ValueError("Clamp must be positive or None")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'input_shape': list(self.input_shape),
            'scales': self.scales,
            'couplings_per_block': self.couplings_per_block,
            'coupling': self.coupling.value,
            'clamp': self.clamp,
            'downsample': self.downsample.value,
            'skip_channels': list(self.skip_channels) if self.skip_channels else None,
            'hidden_channels': self.hidden_channels,
            'cond_channels': self.cond_channels,
            'base': self.base.value,
            'seed': self.seed,
        }


@dataclass
class DenseSpec:
    """Flat flow of alternating random permutations and dense couplings"""
    dim: int
    couplings: int = 8
    hidden: int = 64
    coupling: Union[CouplingKind, str] = CouplingKind.AFFINE
    clamp: Optional[float] = 2.0
    cond_features: int = 0
    base: Union[BaseKind, str] = BaseKind.NORMAL
    seed: int = 0

    def __post_init__(self):
        self.dim = validate_positive_int(self.dim, 'dim')
        if self.dim < 2:
            raise ValueError("Dense flows need at least 2 dimensions")
        self.couplings = validate_positive_int(self.couplings, 'couplings')
        self.hidden = validate_positive_int(self.hidden, 'hidden')
        self.coupling = coerce_enum(CouplingKind, self.coupling, 'coupling')
        self.base = coerce_enum(BaseKind, self.base, 'base')
        if self.cond_features < 0:
            raise ValueError("cond_features cannot be negative")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'dim': self.dim,
            'couplings': self.couplings,
            'hidden': self.hidden,
            'coupling': self.coupling.value,
            'clamp': self.clamp,
            'cond_features': self.cond_features,
            'base': self.base.value,
            'seed': self.seed,
        }


@dataclass
class ConditionerSpec:
    """Trunk choice and widths of a conditioning network"""
    trunk: Union[TrunkKind, str] = TrunkKind.AVG_POOL
    channels: int = 32
    hidden: int = 32
    frozen: bool = False
    combine_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.trunk = coerce_enum(TrunkKind, self.trunk, 'trunk')
        self.channels = validate_positive_int(self.channels, 'channels')
        self.hidden = validate_positive_int(self.hidden, 'hidden')
        if not 0 <= self.combine_weight <= 1:
            raise ValueError("Combine weight must lie in [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'trunk': self.trunk.value,
            'channels': self.channels,
            'hidden': self.hidden,
            'frozen': self.frozen,
            'combine_weight': self.combine_weight,
            'seed': self.seed,
        }
