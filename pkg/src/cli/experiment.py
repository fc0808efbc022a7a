"""
Experiment configuration: flat ``section.key = value`` text parsed into
pydantic models, plus the factories that turn it into operators, flows
and conditioners
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from ..conditioning import Conditioner
from ..data import LinearGaussianProblem
from ..engine import ParameterStore
from ..exceptions import ConfigError
from ..flows import FlowModel, build_cs_multiscale, build_dense, build_iunet, build_multiscale
from ..models.core import (
    ConditionerSpec,
    DenseSpec,
    InversionKind,
    IUNetSpec,
    MultiScaleSpec,
    PhantomKind,
    ProblemKind,
    TrainConfig,
)
from ..operators import FourierOperator, MatrixOperator, MeasurementModel, RadonOperator, gaussian_matrix, make_mask

logger = logging.getLogger(__name__)

NONE_VALUES = ('none', 'null', '')


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ProblemSection(_Section):
    kind: Literal['cs', 'ct', 'mri', 'toy2d'] = 'cs'
    seed: int = 0


class OperatorSection(_Section):
    """Measurement model and noise; unused keys of other problem kinds are ignored"""
    m: int = 196
    variance: Optional[float] = None
    inversion: Optional[Literal['pseudo-inverse', 'tv', 'fbp', 'zero-filled', 'adjoint']] = None
    tv_lambda: float = 0.02
    angles: int = 90
    detectors: Optional[int] = None
    attenuation: float = 1.0
    photon_count: float = 4096
    noise_level: float = 0.1
    noise_mode: Literal['relative', 'componentwise'] = 'relative'
    noise_std: float = 0.3
    noise_free: bool = False
    center_fraction: float = 0.08
    acceleration: int = 4


class ArchitectureSection(_Section):
    kind: Literal['multiscale', 'iunet', 'cs-appendix', 'dense'] = 'multiscale'
    scales: int = 2
    couplings_per_block: int = 2
    # none picks the architecture default: additive for iunet, affine otherwise
    coupling: Optional[Literal['additive', 'affine']] = None
    clamp: Optional[float] = 2.0
    downsample: Literal['haar', 'checkerboard'] = 'haar'
    split_fraction: float = 0.5
    final_dense: int = 0
    permutation: Literal['random-shuffle', 'fixed-orthogonal-mix'] = 'fixed-orthogonal-mix'
    hidden: int = 32
    cond_channels: int = 32
    base: Literal['standard-normal', 'radial-gaussian'] = 'standard-normal'
    repeats: int = 8
    dense_hidden: int = 256
    couplings: int = 8


class ConditionerSection(_Section):
    trunk: Literal['avg-pool', 'cnn', 'resnet', 'unet', 'dense'] = 'avg-pool'
    channels: int = 32
    hidden: int = 32
    frozen: bool = False
    combine_weight: float = 0.0


class TrainSection(_Section):
    learning_rate: float = 1e-4
    plateau_factor: float = 0.8
    plateau_patience: int = 5
    early_stop_patience: int = 10
    batch_size: int = 32
    epochs: int = 50
    dequantize: bool = False
    dequantization_variance: float = 0.005
    conditional_weight: float = 0.0
    validation_fraction: float = 0.1
    stability_threshold: float = 1e-2
    memory_efficient: bool = False
    max_steps_per_epoch: Optional[int] = None


class DataSection(_Section):
    phantom: Literal['ellipses', 'shapes', 'digits-like', 'gaussian-mixture-2d', 'linear-gaussian'] = 'shapes'
    size: int = 28
    count: int = 200
    test_count: int = 20


class EvaluateSection(_Section):
    range_mode: Literal['max-min', 'external'] = 'max-min'
    data_range: Optional[float] = None
    samples: Optional[int] = None
    chunk_size: int = 256
    refine_iterations: int = 100
    refine_lr: float = 1e-4


class OutputSection(_Section):
    directory: str = 'runs/default'


class ExperimentConfig(_Section):
    """Whole experiment; every section and key has a default"""
    problem: ProblemSection = ProblemSection()
    operator: OperatorSection = OperatorSection()
    architecture: ArchitectureSection = ArchitectureSection()
    conditioner: ConditionerSection = ConditionerSection()
    train: TrainSection = TrainSection()
    data: DataSection = DataSection()
    evaluate: EvaluateSection = EvaluateSection()
    output: OutputSection = OutputSection()

    @model_validator(mode='after')
    def _check_problem(self) -> 'ExperimentConfig':
        kind = self.problem.kind
        toy_phantoms = ('gaussian-mixture-2d', 'linear-gaussian')
        if (kind == 'toy2d') != (self.data.phantom in toy_phantoms):
            raise ValueError(f"data.phantom {self.data.phantom} does not fit problem.kind {kind}")
        if kind == 'toy2d' and self.architecture.kind != 'dense':
            raise ValueError("toy2d problems need architecture.kind = dense")
        if kind != 'toy2d' and self.architecture.kind == 'dense':
            raise ValueError("dense architectures are for toy2d problems")
        allowed = {
            'cs': ('pseudo-inverse', 'tv', 'adjoint'),
            'toy2d': ('pseudo-inverse', 'tv', 'adjoint'),
            'ct': ('fbp',),
            'mri': ('zero-filled',),
        }[kind]
        if self.operator.inversion is not None and self.operator.inversion not in allowed:
            raise ValueError(f"operator.inversion {self.operator.inversion} is not available for {kind}")
        return self

    @property
    def seed(self) -> int:
        return self.problem.seed

    @property
    def kind(self) -> ProblemKind:
        return ProblemKind(self.problem.kind)

    @property
    def inversion(self) -> InversionKind:
        if self.operator.inversion is not None:
            return InversionKind(self.operator.inversion)
        return {
            ProblemKind.CS: InversionKind.PSEUDO_INVERSE,
            ProblemKind.TOY2D: InversionKind.PSEUDO_INVERSE,
            ProblemKind.CT: InversionKind.FBP,
            ProblemKind.MRI: InversionKind.ZERO_FILLED,
        }[self.kind]

    @property
    def coupling(self) -> str:
        if self.architecture.coupling is not None:
            return self.architecture.coupling
        return 'additive' if self.architecture.kind == 'iunet' else 'affine'

    @property
    def conditional(self) -> bool:
        return not (self.kind == ProblemKind.TOY2D and self.data.phantom == PhantomKind.GAUSSIAN_MIXTURE_2D.value)

    @property
    def sample_count(self) -> int:
        if self.evaluate.samples is not None:
            return self.evaluate.samples
        return 1000 if self.kind == ProblemKind.CT else 100

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train.model_dump())

    def conditioner_spec(self) -> ConditionerSpec:
        return ConditionerSpec(seed=self.seed, **self.conditioner.model_dump())

    def to_text(self) -> str:
        """Canonical dotted-key text; parses back to an equal config"""
        lines = []
        for section, values in self.model_dump().items():
            for key, value in values.items():
                if value is None:
                    text = 'none'
                elif isinstance(value, bool):
                    text = 'true' if value else 'false'
                else:
                    text = str(value)
                lines.append(f"{section}.{key} = {text}")
        return '\n'.join(lines) + '\n'


SECTIONS = tuple(ExperimentConfig.model_fields)


def _assignments(text: str) -> Dict[str, Dict[str, Any]]:
    sections: Dict[str, Dict[str, Any]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {number} is not a 'section.key = value' assignment: {raw.strip()}")
        section, dot, name = key.partition('.')
        if not dot or not name or '.' in name:
            raise ConfigError("keys must have the form section.key", key=key)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section (expected one of: {', '.join(SECTIONS)})", key=key)
        entries = sections.setdefault(section, {})
        if name in entries:
            raise ConfigError("assigned more than once", key=key)
        entries[name] = None if value.lower() in NONE_VALUES else value
    return sections


def _error_key(error: Dict[str, Any]) -> Optional[str]:
    loc = [str(part) for part in error.get('loc', ()) if not isinstance(part, int)]
    return '.'.join(loc[:2]) if loc else None


def parse_experiment(text: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Parse dotted-key text; ``overrides`` maps dotted keys to values applied last"""
    sections = _assignments(text)
    for dotted, value in (overrides or {}).items():
        section, _, name = dotted.partition('.')
        sections.setdefault(section, {})[name] = value
    try:
        return ExperimentConfig.model_validate(sections)
    except ValidationError as e:
        first = e.errors()[0]
        key = _error_key(first)
        if first.get('type') == 'extra_forbidden':
            raise ConfigError("unknown key", key=key) from None
        raise ConfigError(first.get('msg', 'invalid value'), key=key) from None


def load_experiment(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    config = parse_experiment(text, overrides)
    logger.debug(f"Loaded experiment config from {path}")
    return config


def build_operator(config: ExperimentConfig) -> Optional[MeasurementModel]:
    """Measurement model of the experiment; None for unconditional density estimation"""
    op = config.operator
    size = config.data.size
    kind = config.kind
    if kind == ProblemKind.CS:
        return gaussian_matrix(op.m, size * size, seed=config.seed, variance=op.variance,
                               image_shape=(size, size), inversion=config.inversion, tv_lambda=op.tv_lambda)
    if kind == ProblemKind.CT:
        return RadonOperator(size, op.angles, op.detectors, attenuation=op.attenuation)
    if kind == ProblemKind.MRI:
        return FourierOperator(make_mask(size, op.center_fraction, op.acceleration, seed=config.seed))
    if not config.conditional:
        return None
    problem = linear_gaussian_problem(config)
    return MatrixOperator.from_matrix(problem.matrix, inversion=config.inversion, tv_lambda=op.tv_lambda,
                                      seed=config.seed)


def linear_gaussian_problem(config: ExperimentConfig) -> LinearGaussianProblem:
    return LinearGaussianProblem.default(seed=config.seed, noise_std=config.operator.noise_std)


def _input_shape(config: ExperimentConfig) -> Tuple[int, ...]:
    if config.kind == ProblemKind.TOY2D:
        return (2,)
    return (1, config.data.size, config.data.size)


def build_model(config: ExperimentConfig, params: Optional[ParameterStore] = None) -> FlowModel:
    arch = config.architecture
    seed = config.seed
    params = params if params is not None else ParameterStore(seed=seed)
    cond_channels = arch.cond_channels if config.conditional else 0
    shape = _input_shape(config)
    if arch.kind == 'multiscale':
        spec = MultiScaleSpec(
            input_shape=shape, scales=arch.scales, couplings_per_block=arch.couplings_per_block,
            downsample=arch.downsample, split_fraction=arch.split_fraction, final_dense=arch.final_dense,
            coupling=config.coupling, clamp=arch.clamp, permutation=arch.permutation,
            hidden_channels=arch.hidden, cond_channels=cond_channels, base=arch.base, seed=seed,
        )
        return build_multiscale(spec, params)
    if arch.kind == 'iunet':
        spec = IUNetSpec(
            input_shape=shape, scales=arch.scales, couplings_per_block=arch.couplings_per_block,
            coupling=config.coupling, clamp=arch.clamp, downsample=arch.downsample,
            hidden_channels=arch.hidden, cond_channels=cond_channels, base=arch.base, seed=seed,
        )
        return build_iunet(spec, params)
    if arch.kind == 'cs-appendix':
        if shape != (1, 28, 28):
            raise ConfigError("cs-appendix architecture needs 28x28 images", key='data.size')
        return build_cs_multiscale(repeats=arch.repeats, hidden=arch.hidden, dense_hidden=arch.dense_hidden,
                                   cond_channels=cond_channels, base=arch.base, clamp=arch.clamp,
                                   seed=seed, params=params)
    spec = DenseSpec(dim=shape[0], couplings=arch.couplings, hidden=arch.hidden, coupling=config.coupling,
                     clamp=arch.clamp, cond_features=cond_channels, base=arch.base, seed=seed)
    return build_dense(spec, params)


def build_conditioner(
    config: ExperimentConfig,
    model: FlowModel,
    operator: Optional[MeasurementModel],
) -> Optional[Conditioner]:
    if not model.conditional:
        return None
    if operator is None:
        raise ConfigError("conditional model without a measurement operator", key='problem.kind')
    return Conditioner(config.conditioner_spec(), operator, model.slots, model.params)


def build_pipeline(
    config: ExperimentConfig,
) -> Tuple[Optional[MeasurementModel], FlowModel, Optional[Conditioner]]:
    """Operator, flow and conditioner sharing one parameter store"""
    operator = build_operator(config)
    try:
        model = build_model(config)
        cond = build_conditioner(config, model, operator)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e), key='architecture') from e
    return operator, model, cond


def describe(config: ExperimentConfig) -> List[str]:
    return [
        f"problem {config.problem.kind}, phantom {config.data.phantom} at {config.data.size}",
        f"architecture {config.architecture.kind}, conditioner {config.conditioner.trunk}",
        f"seed {config.seed}, output {config.output.directory}",
    ]


def dump_experiment(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_text())
    return path
