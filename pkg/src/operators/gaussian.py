"""
Dense matrix operators, including the Gaussian compressed-sensing matrix
"""
import logging
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from ..engine import make_rng
from ..models.core import InversionKind, coerce_enum, validate_positive_int
from .interfaces import MeasurementModel
from .solvers import pseudo_inverse, tv_inverse

logger = logging.getLogger(__name__)


class MatrixOperator(MeasurementModel):
    """y = A x for an explicit m x n matrix acting on images flattened row-major"""

    kind = 'matrix'

    def __init__(
        self,
        matrix: np.ndarray,
        image_shape: Optional[Sequence[int]] = None,
        inversion: Union[InversionKind, str] = InversionKind.PSEUDO_INVERSE,
        tv_lambda: float = 0.02,
        seed: Optional[int] = None,
    ):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"Operator matrix must be 2-D, got shape {matrix.shape}")
        self.matrix = matrix
        m, n = matrix.shape
        self.image_shape = tuple(int(s) for s in image_shape) if image_shape is not None else (n,)
        if int(np.prod(self.image_shape)) != n:
            raise ValueError(f"Image shape {self.image_shape} does not hold {n} entries")
        self.measurement_shape = (m,)
        self.inversion = coerce_enum(InversionKind, inversion, 'inversion')
        if self.inversion not in (InversionKind.PSEUDO_INVERSE, InversionKind.TV, InversionKind.ADJOINT):
            raise ValueError(f"Inversion {self.inversion.value} is not available for matrix operators")
        self.tv_lambda = tv_lambda
        self.seed = seed

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, **kwargs: Any) -> 'MatrixOperator':
        return cls(matrix, **kwargs)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def _forward_batch(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[0], -1) @ self.matrix.T

    def _adjoint_batch(self, y: np.ndarray) -> np.ndarray:
        return (y.reshape(y.shape[0], -1) @ self.matrix).reshape((y.shape[0],) + self.image_shape)

    def pseudo_inverse(self, y: np.ndarray, tol: float = 1e-8, maxiter: int = 500) -> np.ndarray:
        return pseudo_inverse(self.matrix, y, tol=tol, maxiter=maxiter).reshape(self.image_shape)

    def tv_inverse(self, y: np.ndarray, lam: Optional[float] = None, tol: float = 1e-6, maxiter: int = 1000) -> np.ndarray:
        lam = self.tv_lambda if lam is None else lam
        return tv_inverse(self.forward, self.adjoint, y, self.image_shape, lam=lam, tol=tol, maxiter=maxiter)

    def approximate_inverse(self, y: np.ndarray) -> np.ndarray:
        batch, single = self._batched(y, self.measurement_shape)
        if self.inversion == InversionKind.ADJOINT:
            out = self._adjoint_batch(batch)
        elif self.inversion == InversionKind.TV:
            out = np.stack([self.tv_inverse(sample) for sample in batch])
        else:
            out = np.stack([self.pseudo_inverse(sample) for sample in batch])
        return out[0] if single else out

    def describe(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'm': self.m,
            'n': self.n,
            'image_shape': list(self.image_shape),
            'inversion': self.inversion.value,
            'tv_lambda': self.tv_lambda,
            'seed': self.seed,
        }


def gaussian_matrix(
    m: int,
    n: int,
    seed: int = 0,
    variance: Optional[float] = None,
    image_shape: Optional[Sequence[int]] = None,
    inversion: Union[InversionKind, str] = InversionKind.PSEUDO_INVERSE,
    tv_lambda: float = 0.02,
) -> MatrixOperator:
    """m x n matrix with i.i.d. N(0, variance) entries; variance defaults to 1/m"""
    m = validate_positive_int(m, 'm')
    n = validate_positive_int(n, 'n')
    variance = 1.0 / m if variance is None else float(variance)
    if variance <= 0:
        raise ValueError("Entry variance must be positive")
    rng = make_rng(seed, 'gaussian-matrix', m, n)
    matrix = rng.standard_normal((m, n)) * np.sqrt(variance)
    logger.debug(f"Gaussian operator {m}x{n}, entry variance {variance:.3e}")
    operator = MatrixOperator(matrix, image_shape=image_shape, inversion=inversion, tv_lambda=tv_lambda, seed=seed)
    operator.kind = 'gaussian'
    return operator
