# Services package
from .checkpoints import ArchiveCheckpointStore, read_checkpoint, write_checkpoint
from .inference import RefinementResult, posterior_samples, refine_sweep, sample_refine
from .metrics import aggregate_metrics, metrics_table, psnr, ssim
from .optim import Adam, PlateauScheduler, adam_step
from .trainer import TrainResult, Trainer, train

__all__ = [
    'ArchiveCheckpointStore',
    'read_checkpoint',
    'write_checkpoint',
    'RefinementResult',
    'posterior_samples',
    'refine_sweep',
    'sample_refine',
    'aggregate_metrics',
    'metrics_table',
    'psnr',
    'ssim',
    'Adam',
    'PlateauScheduler',
    'adam_step',
    'TrainResult',
    'Trainer',
    'train',
]
