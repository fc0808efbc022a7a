"""
Main application entry point
"""
import argparse
import logging
import sys
from typing import List, Optional

from .cli.commands import COMMANDS, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, CommandOptions
from .cli.experiment import load_experiment
from .config import config
from .exceptions import CheckpointError, ConfigError, ConvergenceError, MeasurementMismatchError, NumericalError

FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
# no timestamps on the console, reruns print identical output
CONSOLE_FORMAT = '%(levelname)s %(name)s: %(message)s'


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Setup application logging"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    handlers: List[logging.Handler] = [console]
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        handlers.append(file_handler)
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='flowrecon',
        description='Conditional normalizing flows for linear inverse problems',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', required=True, help='experiment config (section.key = value lines)')
        p.add_argument('--seed', type=int, default=None, help='overrides problem.seed')
        p.add_argument('--out', default=None, help='overrides output.directory')
        return p

    command('simulate', 'generate paired training and test data')
    train = command('train', 'fit the flow by maximum likelihood')
    train.add_argument('--resume', action='store_true', help='continue from checkpoints/last.ckpt')
    recon = command('reconstruct', 'posterior mean and std for each measurement')
    recon.add_argument('--checkpoint', default=None, help='defaults to checkpoints/best.ckpt')
    recon.add_argument('--measurements', default=None, help='dataset directory or FRT1 file')
    recon.add_argument('--samples', type=int, default=None, help='posterior samples per measurement')
    recon.add_argument('--refine', type=float, default=None, metavar='LAMBDA',
                       help='refine one sample per measurement with this likelihood weight')
    recon.add_argument('--save-samples', action='store_true', help='also write every posterior sample')
    evaluate = command('evaluate', 'PSNR/SSIM of reconstructions against references')
    evaluate.add_argument('--reconstructions', default=None, help='FRT1 file, defaults to reconstructions/mean.frt')
    evaluate.add_argument('--references', default=None, help='dataset directory or FRT1 file')
    return parser


def _options(args: argparse.Namespace) -> CommandOptions:
    return CommandOptions(
        checkpoint=getattr(args, 'checkpoint', None),
        measurements=getattr(args, 'measurements', None),
        samples=getattr(args, 'samples', None),
        refine=getattr(args, 'refine', None),
        save_samples=getattr(args, 'save_samples', False),
        resume=getattr(args, 'resume', False),
        reconstructions=getattr(args, 'reconstructions', None),
        references=getattr(args, 'references', None),
    )


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and map failures to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    setup_logging(config.runtime.log_level, config.runtime.log_file)
    logger = logging.getLogger(__name__)

    overrides = {}
    if args.seed is not None:
        overrides['problem.seed'] = args.seed
    if args.out is not None:
        overrides['output.directory'] = args.out
    try:
        experiment = load_experiment(args.config, overrides)
        return COMMANDS[args.command](experiment, _options(args))
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except (NumericalError, ConvergenceError) as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (CheckpointError, OSError) as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO
    except (MeasurementMismatchError, ValueError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
