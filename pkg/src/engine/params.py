"""
Named parameter storage with gradient accumulators and optimiser state
"""
import logging
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..exceptions import ShapeError
from .rng import make_rng
from .tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)


class ParameterStore:
    """Owns every trainable array of a model and its conditioner

    Arrays are replaced on update, never written in place, so tensors handed
    out by ``tensor()`` stay valid snapshots. Names are dotted paths such as
    ``flow.3.subnet.conv1.weight`` and ``cond.trunk.block0.weight``.
    """

    def __init__(self, seed: int = 0, dtype: Any = None):
        self.seed = seed
        self.dtype = np.dtype(dtype) if dtype is not None else get_default_dtype()
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}
        self.step = 0
        self._frozen: Set[str] = set()

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def names(self, prefix: str = '') -> List[str]:
        return [name for name in self.values if name.startswith(prefix)]

    def create(self, name: str, shape: Sequence[int], init: str = 'he', fan_in: Optional[int] = None) -> Tensor:
        """Register a parameter and return its leaf tensor

        He initialisation draws N(0, 2/fan_in) from a Philox stream keyed by
        the parameter name, so values do not depend on creation order.
        """
        if name in self.values:
            raise ValueError(f"Parameter already exists: {name}")
        shape = tuple(int(n) for n in shape)
        if init == 'zeros':
            value = np.zeros(shape, dtype=self.dtype)
        elif init == 'he':
            if fan_in is None:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            rng = make_rng(self.seed, 'param', name)
            value = (rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1))).astype(self.dtype)
        else:
            raise ValueError(f"Unknown initialisation: {init}")
        self._install(name, value)
        return self.tensor(name)

    def _install(self, name: str, value: np.ndarray) -> None:
        value.setflags(write=False)
        self.values[name] = value
        self.grads[name] = np.zeros(value.shape, dtype=value.dtype)
        self.first_moment[name] = np.zeros(value.shape, dtype=value.dtype)
        self.second_moment[name] = np.zeros(value.shape, dtype=value.dtype)

    def set(self, name: str, value: np.ndarray) -> None:
        current = self.values[name]
        value = np.array(value, dtype=current.dtype)
        if value.shape != current.shape:
            raise ShapeError(name, f"expected {current.shape}, got {value.shape}")
        value.setflags(write=False)
        self.values[name] = value

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor for the current value; frozen parameters are constants"""
        return Tensor.wrap(self.values[name], requires_grad=not self.is_frozen(name), param=name)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        if self.is_frozen(name):
            return
        current = self.grads[name]
        if grad.shape != current.shape:
            raise ShapeError(name, f"gradient shape {grad.shape} does not match parameter {current.shape}")
        self.grads[name] = current + grad.astype(current.dtype, copy=False)

    def zero_grad(self) -> None:
        """Reset gradient accumulators; optimiser moments are untouched"""
        for name, value in self.values.items():
            self.grads[name] = np.zeros(value.shape, dtype=value.dtype)

    def freeze(self, prefix: str) -> None:
        self._frozen.add(prefix)
        logger.info(f"Frozen parameters with prefix '{prefix}' ({len(self.names(prefix))} arrays)")

    def unfreeze(self, prefix: str) -> None:
        self._frozen.discard(prefix)

    def is_frozen(self, name: str) -> bool:
        return any(name.startswith(prefix) for prefix in self._frozen)

    def trainable(self) -> List[str]:
        return [name for name in self.values if not self.is_frozen(name)]

    def grad_norm(self) -> float:
        total = 0.0
        for name in self.trainable():
            total += float(np.sum(np.square(self.grads[name], dtype=np.float64)))
        return float(np.sqrt(total))

    def num_parameters(self) -> int:
        return int(sum(value.size for value in self.values.values()))

    def astype(self, dtype: Any) -> 'ParameterStore':
        """Copy with values cast to ``dtype``; optimiser state is cast alongside"""
        clone = ParameterStore(seed=self.seed, dtype=dtype)
        for name, value in self.values.items():
            clone._install(name, value.astype(dtype))
            clone.first_moment[name] = self.first_moment[name].astype(dtype)
            clone.second_moment[name] = self.second_moment[name].astype(dtype)
        clone.step = self.step
        clone._frozen = set(self._frozen)
        return clone

    def copy(self) -> 'ParameterStore':
        return self.astype(self.dtype)

    def state_dict(self, include_optimizer: bool = True) -> Dict[str, np.ndarray]:
        """Flat name -> array mapping for checkpoint archives"""
        state = {f"param/{name}": value for name, value in self.values.items()}
        if include_optimizer:
            for name in self.values:
                state[f"adam_m/{name}"] = self.first_moment[name]
                state[f"adam_v/{name}"] = self.second_moment[name]
            state['adam_step'] = np.array([self.step], dtype=np.float64)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        missing = [name for name in self.values if f"param/{name}" not in state]
        if strict and missing:
            raise KeyError(f"Checkpoint lacks parameters: {', '.join(missing[:5])}")
        for name in self.values:
            key = f"param/{name}"
            if key in state:
                self.set(name, state[key])
            if f"adam_m/{name}" in state:
                self.first_moment[name] = np.array(state[f"adam_m/{name}"], dtype=self.values[name].dtype)
                self.second_moment[name] = np.array(state[f"adam_v/{name}"], dtype=self.values[name].dtype)
        if 'adam_step' in state:
            self.step = int(np.asarray(state['adam_step']).reshape(-1)[0])
        self.zero_grad()

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return self.values.items()
