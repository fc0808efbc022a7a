"""
Tensor engine: eager arithmetic with a single-use reverse-mode tape
"""
from . import ops
from .gradcheck import GradCheckReport, grad_check
from .params import ParameterStore
from .primitives import Op, apply
from .rng import make_rng, seed_sequence
from .serialization import load_archive, read_frt, save_archive, write_frt
from .tensor import (
    Tape,
    TapeNode,
    Tensor,
    active_tape,
    checked_mode,
    get_default_dtype,
    no_record,
    precision,
    set_default_dtype,
)

__all__ = [
    'ops',
    'GradCheckReport',
    'grad_check',
    'ParameterStore',
    'Op',
    'apply',
    'make_rng',
    'seed_sequence',
    'load_archive',
    'read_frt',
    'save_archive',
    'write_frt',
    'Tape',
    'TapeNode',
    'Tensor',
    'active_tape',
    'checked_mode',
    'get_default_dtype',
    'no_record',
    'precision',
    'set_default_dtype',
]
