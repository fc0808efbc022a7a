"""
Core service interfaces defining system boundaries
"""
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..engine import ParameterStore


class IOptimizer(ABC):
    """Interface for gradient-based parameter updates"""

    @abstractmethod
    def step(self, params: ParameterStore, learning_rate: float) -> None:
        """Apply one update from the accumulated gradients"""
        pass


class ILearningRateSchedule(ABC):
    """Interface for validation-driven learning rate schedules"""

    @property
    @abstractmethod
    def learning_rate(self) -> float:
        """Current learning rate"""
        pass

    @abstractmethod
    def observe(self, value: float) -> bool:
        """Record a validation value; returns True when the rate was reduced"""
        pass

    @abstractmethod
    def state_dict(self) -> Dict[str, float]:
        """Serializable scheduler state"""
        pass

    @abstractmethod
    def load_state_dict(self, state: Dict[str, float]) -> None:
        """Restore state saved by ``state_dict``"""
        pass


class ICheckpointStore(ABC):
    """Interface for checkpoint persistence"""

    @abstractmethod
    def save(self, name: str, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
        """Persist arrays and metadata under ``name``"""
        pass

    @abstractmethod
    def load(self, name: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        """Read back what ``save`` wrote"""
        pass

    @abstractmethod
    def exists(self, name: str) -> bool:
        """Check whether a checkpoint is present"""
        pass

    @abstractmethod
    def path(self, name: str) -> Optional[Path]:
        """Location of a checkpoint, if the store is file-backed"""
        pass
