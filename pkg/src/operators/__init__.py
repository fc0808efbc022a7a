# Measurement operators package
from .fourier import FourierOperator, make_mask, zero_filled_ifft
from .gaussian import MatrixOperator, gaussian_matrix
from .interfaces import MeasurementModel
from .noise import add_relative_gaussian_noise, poisson_lowdose_noise
from .radon import RadonOperator, ram_lak_kernel
from .solvers import forward_difference, forward_difference_adjoint, pseudo_inverse, tv_inverse

__all__ = [
    'FourierOperator',
    'make_mask',
    'zero_filled_ifft',
    'MatrixOperator',
    'gaussian_matrix',
    'MeasurementModel',
    'add_relative_gaussian_noise',
    'poisson_lowdose_noise',
    'RadonOperator',
    'ram_lak_kernel',
    'forward_difference',
    'forward_difference_adjoint',
    'pseudo_inverse',
    'tv_inverse',
]
