# Flows package
from .architectures import (
    FlowModel,
    build_cs_multiscale,
    build_dense,
    build_iunet,
    build_multiscale,
)
from .base import BaseDistribution, log_density_normal, log_density_radial
from .couplings import CouplingLayer
from .rearrange import DownsampleLayer, FlattenLayer, PermutationLayer, UpsampleLayer

__all__ = [
    'FlowModel',
    'build_cs_multiscale',
    'build_dense',
    'build_iunet',
    'build_multiscale',
    'BaseDistribution',
    'log_density_normal',
    'log_density_radial',
    'CouplingLayer',
    'DownsampleLayer',
    'FlattenLayer',
    'PermutationLayer',
    'UpsampleLayer',
]
