# Synthetic data package
from .datasets import PairedDataset
from .phantoms import disk, generate_phantoms
from .toy import GaussianMixture2D, LinearGaussianProblem, sample_mixture

__all__ = [
    'PairedDataset',
    'disk',
    'generate_phantoms',
    'GaussianMixture2D',
    'LinearGaussianProblem',
    'sample_mixture',
]
