"""
Adam updates and the plateau learning-rate schedule
"""
import logging
from typing import Dict

import numpy as np

from ..engine import ParameterStore
from .interfaces import ILearningRateSchedule, IOptimizer

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def adam_step(
    params: ParameterStore,
    learning_rate: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
) -> None:
    """One bias-corrected Adam update of every trainable parameter

    The step counter advances even when all gradients are zero; frozen
    parameters and their moments are left untouched.
    """
    if learning_rate <= 0:
        raise ValueError("Learning rate must be positive")
    params.step += 1
    t = params.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name in params.trainable():
        grad = params.grads[name]
        m = beta1 * params.first_moment[name] + (1.0 - beta1) * grad
        v = beta2 * params.second_moment[name] + (1.0 - beta2) * np.square(grad)
        params.first_moment[name] = m
        params.second_moment[name] = v
        update = learning_rate * (m / correction1) / (np.sqrt(v / correction2) + eps)
        params.set(name, params.values[name] - update)


class Adam(IOptimizer):
    """Adam with fixed moment decay rates; state lives in the ParameterStore"""

    def __init__(self, beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params: ParameterStore, learning_rate: float) -> None:
        adam_step(params, learning_rate, self.beta1, self.beta2, self.eps)


class PlateauScheduler(ILearningRateSchedule):
    """Multiply the rate by ``factor`` after ``patience`` epochs without improvement"""

    def __init__(self, learning_rate: float, factor: float = 0.8, patience: int = 5):
        if not 0 < factor < 1:
            raise ValueError("Plateau factor must lie strictly between 0 and 1")
        if patience < 1:
            raise ValueError("Plateau patience must be positive")
        self._learning_rate = float(learning_rate)
        self.factor = factor
        self.patience = patience
        self.best = float('inf')
        self.bad_epochs = 0
        self.reductions = 0

    @property
    def learning_rate(self) -> float:
        return self._learning_rate

    def observe(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return False
        self._learning_rate *= self.factor
        self.bad_epochs = 0
        self.reductions += 1
        logger.info(f"Validation NLL plateaued, learning rate reduced to {self._learning_rate:.3e}")
        return True

    def state_dict(self) -> Dict[str, float]:
        return {
            'learning_rate': self._learning_rate,
            'best': self.best,
            'bad_epochs': self.bad_epochs,
            'reductions': self.reductions,
        }

    def load_state_dict(self, state: Dict[str, float]) -> None:
        self._learning_rate = float(state['learning_rate'])
        self.best = float(state['best'])
        self.bad_epochs = int(state['bad_epochs'])
        self.reductions = int(state['reductions'])
