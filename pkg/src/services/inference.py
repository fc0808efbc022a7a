"""
Posterior sampling and data-consistency refinement of samples
"""
import contextvars
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..config import config
from ..conditioning import Conditioner
from ..engine import ParameterStore, Tape, Tensor, no_record, ops, seed_sequence
from ..exceptions import NumericalError
from ..flows import FlowModel
from ..models.core import PosteriorSummary
from ..operators import MeasurementModel

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 256
DEFAULT_LAMBDAS = (0.0, 0.01, 0.1, 1.0, 10.0)


def _features(
    cond: Optional[Conditioner],
    y: Optional[np.ndarray],
    params: ParameterStore,
) -> Optional[List[Tensor]]:
    """Conditioning features of a single measurement, computed once without recording"""
    if cond is None:
        return None
    with no_record():
        return cond.condition(np.asarray(y)[None], params)


def _tile(features: Optional[List[Tensor]], count: int) -> Optional[List[Tensor]]:
    if features is None:
        return None
    return [Tensor(np.repeat(f.data, count, axis=0)) for f in features]


def posterior_samples(
    model: FlowModel,
    cond: Optional[Conditioner],
    y: Optional[np.ndarray],
    count: int,
    seed: int = 0,
    params: Optional[ParameterStore] = None,
    chunk_size: int = DEFAULT_CHUNK,
    workers: Optional[int] = None,
    key: Optional[int] = None,
) -> PosteriorSummary:
    """Draw ``count`` samples x = T^-1(z; h(y)) and summarise them

    Chunk k uses the k-th child of one SeedSequence, so the samples do not
    depend on the number of worker threads. ``key`` selects a separate
    stream, e.g. the index of the measurement in a batch.
    """
    if count < 1:
        raise ValueError(f"Sample count must be at least 1, got {count}")
    if model.conditional and y is None:
        raise ValueError("Conditional model needs a measurement to sample from")
    params = params if params is not None else model.params
    features = _features(cond, y, params)
    sizes = [min(chunk_size, count - start) for start in range(0, count, chunk_size)]
    stream = (seed, 'posterior') if key is None else (seed, 'posterior', key)
    children = seed_sequence(*stream).spawn(len(sizes))
    workers = max(1, min(workers or config.runtime.threads, len(sizes)))

    def draw(size: int, child: np.random.SeedSequence) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(child))
        return model.sample(size, rng, _tile(features, size), params)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(contextvars.copy_context().run, draw, size, child)
            for size, child in zip(sizes, children)
        ]
        chunks = [future.result() for future in futures]
    samples = np.concatenate(chunks).astype(np.float64)
    logger.debug(f"Drew {count} posterior samples in {len(sizes)} chunks on {workers} workers")
    return PosteriorSummary(samples=samples)


@dataclass
class RefinementResult:
    """Initial sample, refined iterate and the objective per iteration"""
    initial: np.ndarray
    refined: np.ndarray
    objective: List[float] = field(default_factory=list)
    data_residual: List[float] = field(default_factory=list)
    stopped_early: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'iterations': len(self.objective),
            'initial_objective': self.objective[0] if self.objective else None,
            'final_objective': self.objective[-1] if self.objective else None,
            'initial_residual': self.data_residual[0] if self.data_residual else None,
            'final_residual': self.data_residual[-1] if self.data_residual else None,
            'stopped_early': self.stopped_early,
        }


def refinement_objective(
    model: FlowModel,
    operator: MeasurementModel,
    x: Tensor,
    y: Tensor,
    lam: float,
    features: Optional[List[Tensor]],
    params: ParameterStore,
) -> Tensor:
    """||A x - y||^2 - lam * log p(x | y) summed over the batch"""
    residual = ops.sub(operator.apply_tensor(x), y)
    objective = ops.sum(ops.square(residual))
    if lam:
        log_likelihood = ops.sum(model.log_likelihood(x, features, params))
        objective = ops.sub(objective, ops.mul(log_likelihood, lam))
    return objective


def sample_refine(
    model: FlowModel,
    cond: Optional[Conditioner],
    operator: MeasurementModel,
    y: np.ndarray,
    lam: float,
    iterations: int = 100,
    lr: float = 1e-4,
    z: Optional[np.ndarray] = None,
    seed: int = 0,
    params: Optional[ParameterStore] = None,
) -> RefinementResult:
    """Gradient descent on ||A x - y||^2 - lam log p(x | y) from a posterior sample

    Conditioning features stay fixed at h(y). A non-finite objective stops
    the descent and the best iterate so far is returned.
    """
    if lam < 0:
        raise ValueError(f"Refinement weight must be non-negative, got {lam}")
    if iterations < 0:
        raise ValueError("Iteration count cannot be negative")
    params = params if params is not None else model.params
    features = _features(cond, y, params)
    if z is None:
        z = model.base.sample(1, np.random.Generator(np.random.Philox(seed_sequence(seed, 'refine'))))
    z_tensor = Tensor(np.asarray(z).reshape(1, model.dim), dtype=params.dtype)
    with no_record():
        x0, _ = model.inverse(z_tensor, features, params)
    target = Tensor(operator.check_measurements(y), dtype=params.dtype)

    current = x0.data
    best, best_value = current, float('inf')
    objective: List[float] = []
    residuals: List[float] = []
    stopped = False
    for step in range(iterations + 1):
        x = Tensor(current, requires_grad=True)
        try:
            with Tape() as tape:
                value_tensor = refinement_objective(model, operator, x, target, lam, features, params)
            value = value_tensor.item()
        except NumericalError:
            value = float('nan')
        if not np.isfinite(value):
            logger.warning(f"Refinement objective became non-finite at iteration {step}, keeping best iterate")
            stopped = True
            break
        objective.append(value)
        residuals.append(float(np.linalg.norm(operator.forward(current.reshape((1,) + operator.image_shape))
                                              - target.data)))
        if value < best_value:
            best, best_value = current, value
        if step == iterations:
            break
        tape.backward(value_tensor)
        current = current - lr * tape.grad(x)

    refined = best if stopped else current
    shape = model.input_shape
    return RefinementResult(
        initial=np.asarray(x0.data, dtype=np.float64).reshape(shape),
        refined=np.asarray(refined, dtype=np.float64).reshape(shape),
        objective=objective,
        data_residual=residuals,
        stopped_early=stopped,
    )


def refine_sweep(
    model: FlowModel,
    cond: Optional[Conditioner],
    operator: MeasurementModel,
    y: np.ndarray,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    iterations: int = 100,
    lr: float = 1e-4,
    seed: int = 0,
    params: Optional[ParameterStore] = None,
) -> pd.DataFrame:
    """Refine the same initial sample for every weight; one row per weight"""
    params = params if params is not None else model.params
    z = model.base.sample(1, np.random.Generator(np.random.Philox(seed_sequence(seed, 'refine'))))
    features = _features(cond, y, params)
    rows = []
    for lam in lambdas:
        result = sample_refine(model, cond, operator, y, lam, iterations, lr, z=z, seed=seed, params=params)
        x = Tensor(result.refined[None], dtype=params.dtype)
        with no_record():
            log_likelihood = model.log_likelihood(x, features, params).item()
        rows.append({
            'lambda': lam,
            'objective': result.objective[-1] if result.objective else float('nan'),
            'data_residual': result.data_residual[-1] if result.data_residual else float('nan'),
            'log_likelihood': log_likelihood,
            'stopped_early': result.stopped_early,
        })
    return pd.DataFrame(rows)
