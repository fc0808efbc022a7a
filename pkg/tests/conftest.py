"""
Shared fixtures and helpers
"""
import numpy as np
import pytest

from src.engine import ParameterStore, precision


def randomize(params: ParameterStore, seed: int = 0, scale: float = 0.1, prefix: str = '') -> ParameterStore:
    """Overwrite every parameter (optionally under ``prefix``) with small random values"""
    rng = np.random.default_rng(seed)
    for name in params.names(prefix):
        shape = params.values[name].shape
        params.set(name, scale * rng.standard_normal(shape))
    return params


def jacobian(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a flat map f: R^n -> R^n"""
    n = x.size
    columns = []
    for i in range(n):
        bump = np.zeros(n)
        bump[i] = step
        columns.append((f(x + bump) - f(x - bump)) / (2 * step))
    return np.stack(columns, axis=1)


@pytest.fixture
def float64():
    """Run the test body at 64-bit default precision"""
    with precision(np.float64) as dtype:
        yield dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
