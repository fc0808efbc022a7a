"""
Runtime configuration for flowrecon

Experiment settings (operators, architectures, training) live in the
experiment config file, see src/cli/experiment.py. This module only holds
process-wide knobs read from the environment.
"""
import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()


def _env_flag(name: str, default: str = 'false') -> bool:
    return os.getenv(name, default).lower() in ('1', 'true', 'yes')


@dataclass
class RuntimeConfig:
    """Worker and logging settings"""
    threads: int = max(1, int(os.getenv('FLOWRECON_THREADS', str(os.cpu_count() or 1))))
    log_level: str = os.getenv('FLOWRECON_LOG_LEVEL', 'INFO')
    log_file: str = os.getenv('FLOWRECON_LOG_FILE', 'flowrecon.log')


@dataclass
class NumericsConfig:
    """Precision policy and checked mode"""
    dtype: str = os.getenv('FLOWRECON_DTYPE', 'float32')
    verification_dtype: str = 'float64'
    check_finite: bool = _env_flag('FLOWRECON_CHECK_FINITE')


@dataclass
class AppConfig:
    """Main application configuration"""
    runtime: RuntimeConfig
    numerics: NumericsConfig

    def __init__(self):
        self.runtime = RuntimeConfig()
        self.numerics = NumericsConfig()


# Global configuration instance
config = AppConfig()
