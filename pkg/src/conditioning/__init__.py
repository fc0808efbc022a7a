# Conditioning package
from .losses import conditional_loss, nll_loss
from .networks import Conditioner, condition, conditioner_reconstruction

__all__ = [
    'Conditioner',
    'condition',
    'conditioner_reconstruction',
    'conditional_loss',
    'nll_loss',
]
