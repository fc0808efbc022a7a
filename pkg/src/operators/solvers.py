"""
Conjugate-gradient reconstructions: minimum-norm pseudo-inverse and
TV-regularised (quadratic) inverse
"""
import logging
from typing import Callable, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from ..exceptions import ConvergenceError

logger = logging.getLogger(__name__)

Apply = Callable[[np.ndarray], np.ndarray]


def forward_difference(x: np.ndarray) -> np.ndarray:
    """Stacked forward differences along every axis; replicate boundary (last difference 0)"""
    grads = []
    for axis in range(x.ndim):
        grads.append(np.diff(x, axis=axis, append=np.take(x, [-1], axis=axis)))
    return np.stack(grads)


def forward_difference_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of ``forward_difference``"""
    out = np.zeros(g.shape[1:], dtype=g.dtype)
    for axis in range(g.shape[0]):
        component = np.moveaxis(g[axis], axis, 0).copy()
        component[-1] = 0
        adjoint = -component
        adjoint[1:] += component[:-1]
        out += np.moveaxis(adjoint, 0, axis)
    return out


def _solve(name: str, operator: LinearOperator, rhs: np.ndarray, tol: float, maxiter: int) -> Tuple[np.ndarray, int]:
    iterations = 0

    def count(_: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0
    solution, info = cg(operator, rhs, rtol=tol, atol=0.0, maxiter=maxiter, callback=count)
    residual = float(np.linalg.norm(operator.matvec(solution) - rhs)) / rhs_norm
    if info != 0:
        raise ConvergenceError(name, residual, iterations)
    logger.debug(f"{name} converged in {iterations} iterations (relative residual {residual:.2e})")
    return solution, iterations


def pseudo_inverse(
    matrix: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-8,
    maxiter: int = 500,
) -> np.ndarray:
    """Minimum-norm least-squares solution A^+ y by CG on the normal equations

    Wide matrices solve A A^T w = y and return A^T w; tall or square ones
    solve A^T A x = A^T y.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = matrix.shape
    if y.shape != (m,):
        raise ValueError(f"Measurement vector must have length {m}, got shape {y.shape}")
    if m < n:
        gram = LinearOperator((m, m), matvec=lambda w: matrix @ (matrix.T @ w), dtype=np.float64)
        w, _ = _solve('pseudo_inverse (CGNE)', gram, y, tol, maxiter)
        return matrix.T @ w
    gram = LinearOperator((n, n), matvec=lambda v: matrix.T @ (matrix @ v), dtype=np.float64)
    x, _ = _solve('pseudo_inverse (CGNR)', gram, matrix.T @ y, tol, maxiter)
    return x


def tv_inverse(
    forward: Apply,
    adjoint: Apply,
    y: np.ndarray,
    image_shape: Tuple[int, ...],
    lam: float = 0.02,
    tol: float = 1e-6,
    maxiter: int = 1000,
) -> np.ndarray:
    """Solve (A^T A + lam D^T D) x = A^T y with D the forward-difference gradient"""
    if lam <= 0:
        raise ValueError("Regularisation weight must be positive")
    size = int(np.prod(image_shape))

    def normal(v: np.ndarray) -> np.ndarray:
        image = v.reshape(image_shape)
        data_term = adjoint(forward(image))
        smooth_term = forward_difference_adjoint(forward_difference(image))
        return (np.asarray(data_term) + lam * smooth_term).reshape(-1)

    operator = LinearOperator((size, size), matvec=normal, dtype=np.float64)
    rhs = np.asarray(adjoint(np.asarray(y, dtype=np.float64)), dtype=np.float64).reshape(-1)
    solution, _ = _solve('tv_inverse', operator, rhs, tol, maxiter)
    return solution.reshape(image_shape)
