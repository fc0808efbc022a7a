"""
Central finite-difference verification of tape gradients
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from .params import ParameterStore
from .rng import make_rng
from .tensor import Tape, Tensor, no_record, precision

logger = logging.getLogger(__name__)

LossBuilder = Callable[[ParameterStore], Tensor]


@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error between tape and finite differences"""
    errors: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(error <= self.tol for error in self.errors.values())

    def failures(self) -> Dict[str, float]:
        return {name: error for name, error in self.errors.items() if error > self.tol}

    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {'errors': dict(self.errors), 'tol': self.tol, 'passed': self.passed}


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: LossBuilder,
    params: ParameterStore,
    step: float = 1e-6,
    tol: float = 1e-5,
    names: Optional[Sequence[str]] = None,
    max_entries: Optional[int] = None,
    seed: int = 0,
    reference_dtype: Any = None,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare the tape gradient of ``f`` with central differences

    ``f`` builds a scalar loss from the store and must be deterministic.
    With ``reference_dtype`` the differences are taken on a cast copy of the
    store (typically float64) so a 32-bit tape can be checked against a
    clean oracle.
    """
    params.zero_grad()
    with Tape() as tape:
        loss = f(params)
    tape.backward(loss, store=params)

    reference = params.astype(reference_dtype) if reference_dtype is not None else params.copy()
    dtype = reference.dtype

    def evaluate() -> float:
        with precision(dtype), no_record():
            return f(reference).item()

    report = GradCheckReport(tol=tol)
    for name in names if names is not None else params.trainable():
        analytic = params.grads[name].astype(np.float64)
        base = reference.values[name]
        flat_count = base.size
        if max_entries is not None and flat_count > max_entries:
            indices = make_rng(seed, 'gradcheck', name).choice(flat_count, size=max_entries, replace=False)
        else:
            indices = np.arange(flat_count)

        worst = 0.0
        for index in indices:
            bumped = base.copy().reshape(-1)
            original = bumped[index]
            bumped[index] = original + step
            reference.set(name, bumped.reshape(base.shape))
            plus = evaluate()
            bumped[index] = original - step
            reference.set(name, bumped.reshape(base.shape))
            minus = evaluate()
            numeric = (plus - minus) / (2 * step)
            worst = max(worst, relative_error(float(analytic.reshape(-1)[index]), numeric, floor))
        reference.set(name, base)
        report.errors[name] = worst
        logger.debug(f"grad_check {name}: max relative error {worst:.3e} over {len(indices)} entries")

    return report
