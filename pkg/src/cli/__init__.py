# CLI package
from .commands import COMMANDS, CommandOptions, cmd_evaluate, cmd_reconstruct, cmd_simulate, cmd_train
from .experiment import ExperimentConfig, build_pipeline, dump_experiment, load_experiment, parse_experiment

__all__ = [
    'COMMANDS',
    'CommandOptions',
    'cmd_evaluate',
    'cmd_reconstruct',
    'cmd_simulate',
    'cmd_train',
    'ExperimentConfig',
    'build_pipeline',
    'dump_experiment',
    'load_experiment',
    'parse_experiment',
]
