"""
Tensor values and the recording tape used for reverse-mode differentiation
"""
import contextlib
import contextvars
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..config import config
from ..exceptions import ShapeError, TapeConsumedError

logger = logging.getLogger(__name__)

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_default_dtype: contextvars.ContextVar = contextvars.ContextVar(
    'default_dtype', default=np.dtype(config.numerics.dtype)
)
_check_finite: contextvars.ContextVar = contextvars.ContextVar(
    'check_finite', default=config.numerics.check_finite
)
_tape_stack: contextvars.ContextVar = contextvars.ContextVar('tape_stack', default=())
_recording: contextvars.ContextVar = contextvars.ContextVar('recording', default=True)


def get_default_dtype() -> np.dtype:
    """Dtype used for tensors built from Python values"""
    return _default_dtype.get()


def set_default_dtype(dtype: Any) -> None:
    """Set the default dtype for the current context"""
    dtype = np.dtype(dtype)
    if dtype not in FLOAT_DTYPES:
        raise ValueError(f"Unsupported dtype: {dtype}")
    _default_dtype.set(dtype)


@contextlib.contextmanager
def precision(dtype: Any) -> Iterator[np.dtype]:
    """Temporarily switch the default dtype, e.g. to float64 for verification"""
    dtype = np.dtype(dtype)
    if dtype not in FLOAT_DTYPES:
        raise ValueError(f"Unsupported dtype: {dtype}")
    token = _default_dtype.set(dtype)
    try:
        yield dtype
    finally:
        _default_dtype.reset(token)


def finite_checks_enabled() -> bool:
    return _check_finite.get()


@contextlib.contextmanager
def checked_mode(enabled: bool = True) -> Iterator[None]:
    """Raise NumericalError as soon as a primitive produces NaN or Inf"""
    token = _check_finite.set(enabled)
    try:
        yield
    finally:
        _check_finite.reset(token)


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Evaluate operations eagerly without appending them to any tape"""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


def active_tape() -> Optional['Tape']:
    """Innermost tape that is currently recording, if any"""
    if not _recording.get():
        return None
    stack = _tape_stack.get()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array with shape metadata

    Tensors that should receive gradients are leaves created with
    ``requires_grad=True`` (or parameter leaves from a ParameterStore);
    every other tensor is either a constant or the output of a recorded node.
    """

    __slots__ = ('data', 'requires_grad', 'param', '__weakref__')

    def __init__(
        self,
        data: Any,
        dtype: Any = None,
        requires_grad: bool = False,
        param: Optional[str] = None,
    ):
        if dtype is None:
            if isinstance(data, (np.ndarray, np.floating)) and np.asarray(data).dtype in FLOAT_DTYPES:
                dtype = np.asarray(data).dtype
            else:
                dtype = get_default_dtype()
        array = np.array(data, dtype=np.dtype(dtype))
        array.setflags(write=False)
        self.data = array
        self.requires_grad = requires_grad
        self.param = param

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False, param: Optional[str] = None) -> 'Tensor':
        """Wrap an array without copying; the array is frozen in place"""
        tensor = cls.__new__(cls)
        array.setflags(write=False)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.param = param
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError('item', f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # Arithmetic delegates to the functional API
    def __add__(self, other: Any) -> 'Tensor':
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other: Any) -> 'Tensor':
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other: Any) -> 'Tensor':
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> 'Tensor':
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: Any) -> 'Tensor':
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> 'Tensor':
        from . import ops
        return ops.mul(other, self)

    def __neg__(self) -> 'Tensor':
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        from . import ops
        return ops.matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    """One recorded operation"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    cache: Dict[str, Any] = field(default_factory=dict)


class Tape:
    """Single-use record of eagerly evaluated operations

    Nodes are appended in execution order, so the list is already a
    topological order of the graph. After ``backward`` the nodes are
    released and only leaf gradients remain readable via ``grad``.

    Example:
        with Tape() as tape:
            loss = ops.mean(ops.square(x))
        tape.backward(loss, store=params)
    """

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []
        self._outputs: Set[int] = set()
        self._leaves: Dict[int, Tensor] = {}
        self._leaf_grads: Dict[int, Tuple[Tensor, np.ndarray]] = {}
        self._consumed = False
        self._token: Optional[contextvars.Token] = None
        self._recording_token: Optional[contextvars.Token] = None

    def __enter__(self) -> 'Tape':
        # entering a tape re-enables recording, also inside no_record()
        self._token = _tape_stack.set(_tape_stack.get() + (self,))
        self._recording_token = _recording.set(True)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        if self._recording_token is not None:
            _recording.reset(self._recording_token)
            self._recording_token = None
        if self._token is not None:
            _tape_stack.reset(self._token)
            self._token = None

    @property
    def consumed(self) -> bool:
        return self._consumed

    def is_tracked(self, tensor: Tensor) -> bool:
        return tensor.requires_grad or id(tensor) in self._outputs

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward: BackwardFn,
        cache: Optional[Dict[str, Any]] = None,
    ) -> TapeNode:
        """Append a node whose output has already been computed"""
        if self._consumed:
            raise TapeConsumedError("cannot record on a tape that has been consumed")
        for tensor in inputs:
            if tensor.requires_grad and id(tensor) not in self._outputs:
                self._leaves[id(tensor)] = tensor
        node = TapeNode(op=op, inputs=tuple(inputs), output=output, backward=backward, cache=cache or {})
        self.nodes.append(node)
        self._outputs.add(id(output))
        return node

    def backward(self, output: Tensor, seed: Optional[np.ndarray] = None, store: Any = None) -> None:
        """Propagate ``seed`` from ``output`` back to every tracked leaf

        Gradients of parameter leaves are accumulated into ``store``
        (a ParameterStore); gradients of other leaves are kept on the tape.
        """
        if self._consumed:
            raise TapeConsumedError("tape has already been consumed by a backward pass")
        if seed is None:
            seed = np.ones(output.shape, dtype=output.dtype)
        seed = np.asarray(seed, dtype=output.dtype)
        if seed.shape != output.shape:
            raise ShapeError('backward', f"seed shape {seed.shape} does not match output shape {output.shape}")

        grads: Dict[int, np.ndarray] = {id(output): seed}
        if output.requires_grad and id(output) not in self._outputs:
            self._leaves[id(output)] = output

        for node in reversed(self.nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            input_grads = node.backward(grad)
            for tensor, input_grad in zip(node.inputs, input_grads):
                if input_grad is None or not self.is_tracked(tensor):
                    continue
                key = id(tensor)
                grads[key] = grads[key] + input_grad if key in grads else input_grad

        for key, grad in grads.items():
            leaf = self._leaves.get(key)
            if leaf is None:
                continue
            self._leaf_grads[key] = (leaf, grad)
            if leaf.param is not None and store is not None:
                store.accumulate(leaf.param, grad)

        logger.debug(f"Backward pass over {len(self.nodes)} nodes, {len(self._leaf_grads)} leaf gradients")
        self._consumed = True
        self.nodes = []
        self._outputs = set()

    def grad(self, tensor: Tensor) -> Optional[np.ndarray]:
        """Gradient of a leaf after backward, or None if it was unreachable"""
        entry = self._leaf_grads.get(id(tensor))
        if entry is None or entry[0] is not tensor:
            return None
        return entry[1]
