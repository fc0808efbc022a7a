"""
The four flowrecon commands: simulate, train, reconstruct, evaluate

Every command reads the experiment config and works inside
``output.directory``:

    config.txt                 normalised experiment config
    data/train, data/test      paired datasets (x.frt, y.frt, manifest.txt)
    checkpoints/               best.ckpt, last.ckpt
    history.csv, model.txt     training history and model manifest
    reconstructions/           mean.frt, std.frt, samples.frt, refined.frt, previews/
    metrics.csv, metrics_summary.csv
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..conditioning import Conditioner
from ..data import PairedDataset, generate_phantoms, sample_mixture
from ..engine import make_rng, read_frt, write_frt
from ..exceptions import CheckpointError, ConfigError, MeasurementMismatchError
from ..flows import FlowModel
from ..models.core import PhantomKind, ProblemKind
from ..operators import MeasurementModel, add_relative_gaussian_noise, poisson_lowdose_noise
from ..services import (
    ArchiveCheckpointStore,
    aggregate_metrics,
    metrics_table,
    posterior_samples,
    read_checkpoint,
    sample_refine,
    train,
)
from ..services.metrics import format_summary
from ..services.trainer import BEST
from .experiment import ExperimentConfig, build_pipeline, describe, dump_experiment, linear_gaussian_problem

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

CONFIG_NAME = 'config.txt'
TRAIN_DIR = 'data/train'
TEST_DIR = 'data/test'
CHECKPOINT_DIR = 'checkpoints'
RECON_DIR = 'reconstructions'


@dataclass
class CommandOptions:
    """Per-command flags beyond the experiment config"""
    checkpoint: Optional[str] = None
    measurements: Optional[str] = None
    samples: Optional[int] = None
    refine: Optional[float] = None
    save_samples: bool = False
    resume: bool = False
    reconstructions: Optional[str] = None
    references: Optional[str] = None


def output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _phantoms(config: ExperimentConfig, count: int, split: str) -> np.ndarray:
    kind = PhantomKind(config.data.phantom)
    # train and test draw from disjoint streams of the same seed
    seed = int(make_rng(config.seed, 'phantoms', split).integers(0, 2 ** 63 - 1))
    return generate_phantoms(kind, config.data.size, count, seed)


def measure(
    config: ExperimentConfig,
    operator: MeasurementModel,
    x: np.ndarray,
    split: str,
) -> np.ndarray:
    """Clean measurements A x, then the configured noise model"""
    op = config.operator
    y = operator.forward(x)
    if op.noise_free:
        return y
    rng = make_rng(config.seed, 'noise', split)
    if config.kind == ProblemKind.CT:
        return poisson_lowdose_noise(np.maximum(y, 0.0), op.photon_count, rng=rng, attenuation=op.attenuation)
    return np.stack([add_relative_gaussian_noise(sample, op.noise_level, rng=rng, mode=op.noise_mode)
                     for sample in y])


def simulate_split(
    config: ExperimentConfig,
    operator: Optional[MeasurementModel],
    count: int,
    split: str,
) -> PairedDataset:
    meta: Dict[str, Any] = {
        'problem': config.problem.kind,
        'phantom': config.data.phantom,
        'seed': config.seed,
        'split': split,
    }
    if config.data.phantom == PhantomKind.GAUSSIAN_MIXTURE_2D.value:
        seed = int(make_rng(config.seed, 'mixture', split).integers(0, 2 ** 63 - 1))
        return PairedDataset(sample_mixture(count, seed), None, meta)
    if config.data.phantom == PhantomKind.LINEAR_GAUSSIAN.value:
        problem = linear_gaussian_problem(config)
        x, y = problem.sample(count, make_rng(config.seed, 'linear-gaussian', split))
        meta['problem_definition'] = problem.to_dict()
        return PairedDataset(x, y, meta)
    if operator is None:
        raise ConfigError("image problems need a measurement operator", key='problem.kind')
    x = _phantoms(config, count, split)
    y = measure(config, operator, x, split)
    meta['operator'] = operator.describe()
    return PairedDataset(x, y, meta)


def _json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def cmd_simulate(config: ExperimentConfig, options: CommandOptions) -> int:
    out = output_dir(config)
    dump_experiment(config, out / CONFIG_NAME)
    operator, _, _ = build_pipeline(config)
    for split, count in (('train', config.data.count), ('test', config.data.test_count)):
        dataset = simulate_split(config, operator, count, split)
        dataset.meta = _json_safe(dataset.meta)
        dataset.save(out / f"data/{split}")
    logger.info(f"Simulated {config.data.count} training and {config.data.test_count} test pairs in {out}")
    return EXIT_OK


def _load_dataset(path: Path) -> PairedDataset:
    if not path.exists():
        raise CheckpointError(f"dataset not found: {path} (run 'flowrecon simulate' first)")
    return PairedDataset.load(path)


def cmd_train(config: ExperimentConfig, options: CommandOptions) -> int:
    out = output_dir(config)
    dataset = _load_dataset(out / TRAIN_DIR)
    _, model, cond = build_pipeline(config)
    if dataset.conditional != model.conditional:
        raise ConfigError("dataset and model disagree on whether training is conditional", key='data.phantom')
    for line in describe(config):
        logger.info(line)
    (out / 'model.txt').write_text(model.manifest())
    store = ArchiveCheckpointStore(out / CHECKPOINT_DIR)
    result = train(model, cond, dataset, config.train_config(), store=store, resume=options.resume,
                   experiment={'config': config.to_text()})
    result.history.to_csv(out / 'history.csv', index=False)
    logger.info(f"Best validation NLL {result.best_val_nll:.4f} at epoch {result.best_epoch}")
    if not result.history.empty:
        logger.info(f"Final validation NLL {result.history['val_nll'].iloc[-1]:.4f}")
    if result.aborted or result.unstable:
        logger.error("Training was numerically unstable (round-trip residual or non-finite loss)")
        return EXIT_NUMERICAL
    return EXIT_OK


def load_trained(
    config: ExperimentConfig,
    checkpoint: Optional[str] = None,
) -> Tuple[Optional[MeasurementModel], FlowModel, Optional[Conditioner]]:
    """Rebuild the pipeline from the config and install checkpoint parameters"""
    path = Path(checkpoint) if checkpoint else output_dir(config) / CHECKPOINT_DIR / f"{BEST}.ckpt"
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    arrays, meta = read_checkpoint(path)
    operator, model, cond = build_pipeline(config)
    try:
        model.params.load_state_dict(arrays, strict=True)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} does not fit the configured model: {e}") from e
    logger.info(f"Loaded checkpoint {path} (epoch {meta.get('epoch')})")
    return operator, model, cond


def _measurements(config: ExperimentConfig, model: FlowModel, options: CommandOptions) -> Optional[np.ndarray]:
    if not model.conditional:
        return None
    if options.measurements:
        path = Path(options.measurements)
        y = read_frt(path) if path.is_file() else _load_dataset(path).y
    else:
        y = _load_dataset(output_dir(config) / TEST_DIR).y
    if y is None:
        raise ConfigError("measurement dataset holds no measurements", key='data.phantom')
    return np.asarray(y, dtype=np.float64)


def write_pgm(path: Path, image: np.ndarray) -> Tuple[float, float]:
    """8-bit binary PGM, min-max scaled; returns the (min, max) used"""
    image = np.asarray(image, dtype=np.float64)
    image = image.reshape(image.shape[-2:])
    low, high = float(image.min()), float(image.max())
    scaled = np.zeros_like(image) if high == low else (image - low) / (high - low)
    pixels = np.clip(np.round(scaled * 255), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode('ascii') + pixels.tobytes())
    return low, high


def write_previews(directory: Path, name: str, images: np.ndarray) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for index, image in enumerate(images):
        low, high = write_pgm(directory / f"{name}_{index:04d}.pgm", image)
        lines.append(f"{name}_{index:04d}.pgm min {low!r} max {high!r}")
    (directory / f"{name}_scaling.txt").write_text('\n'.join(lines) + '\n')


def cmd_reconstruct(config: ExperimentConfig, options: CommandOptions) -> int:
    out = output_dir(config)
    operator, model, cond = load_trained(config, options.checkpoint)
    y_all = _measurements(config, model, options)
    count = options.samples if options.samples is not None else config.sample_count
    batch: List[Optional[np.ndarray]] = [None] if y_all is None else list(y_all)
    if options.refine is not None and (operator is None or y_all is None):
        raise ConfigError("--refine needs a conditional model with a measurement operator", key='problem.kind')

    means, stds, samples, initial, refined = [], [], [], [], []
    weight = config.conditioner.combine_weight
    for index, y in enumerate(batch):
        summary = posterior_samples(model, cond, y, count, seed=config.seed,
                                    chunk_size=config.evaluate.chunk_size, key=index)
        mean = summary.mean
        if weight > 0 and cond is not None and cond.has_reconstruction:
            reconstruction = cond.reconstruction(np.asarray(y)[None]).data[0]
            mean = summary.combined(reconstruction.reshape(mean.shape), weight)
        means.append(mean)
        stds.append(summary.std)
        if options.save_samples:
            samples.append(summary.samples)
        if options.refine is not None:
            z = model.base.sample(1, make_rng(config.seed, 'refine', index))
            result = sample_refine(model, cond, operator, y, options.refine,
                                   iterations=config.evaluate.refine_iterations,
                                   lr=config.evaluate.refine_lr, z=z)
            initial.append(result.initial)
            refined.append(result.refined)
            logger.info(f"Refined measurement {index}: residual "
                        f"{result.data_residual[0]:.4g} -> {result.data_residual[-1]:.4g}")
        logger.debug(f"Reconstructed measurement {index} from {count} samples")

    target = out / RECON_DIR
    target.mkdir(parents=True, exist_ok=True)
    outputs = {'mean': np.stack(means), 'std': np.stack(stds)}
    if samples:
        outputs['samples'] = np.stack(samples)
    if refined:
        outputs['initial'] = np.stack(initial)
        outputs['refined'] = np.stack(refined)
    images = len(model.input_shape) == 3
    for name, array in outputs.items():
        write_frt(target / f"{name}.frt", array.astype(np.float64))
        if images and name != 'samples':
            write_previews(target / 'previews', name, array)
    logger.info(f"Wrote {len(batch)} reconstructions ({count} samples each) to {target}")
    return EXIT_OK


def _images(path: Path) -> np.ndarray:
    if path.is_dir():
        return _load_dataset(path).x
    return read_frt(path)


def cmd_evaluate(config: ExperimentConfig, options: CommandOptions) -> int:
    out = output_dir(config)
    recon_path = Path(options.reconstructions) if options.reconstructions else out / RECON_DIR / 'mean.frt'
    ref_path = Path(options.references) if options.references else out / TEST_DIR
    estimates = _images(recon_path)
    references = _images(ref_path)
    if len(estimates) != len(references):
        raise MeasurementMismatchError(references.shape, estimates.shape)
    if estimates.ndim < 3:
        raise ConfigError("evaluate needs image reconstructions", key='problem.kind')
    range_mode = config.evaluate.range_mode
    values = None if config.evaluate.data_range is None else [config.evaluate.data_range] * len(references)
    table = metrics_table(list(estimates), list(references), range_mode=range_mode, values=values)
    summary = aggregate_metrics(table)
    table.to_csv(out / 'metrics.csv', index=False)
    summary.to_csv(out / 'metrics_summary.csv', index=False)
    for line in format_summary(summary).splitlines():
        logger.info(line)
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'reconstruct': cmd_reconstruct,
    'evaluate': cmd_evaluate,
}
