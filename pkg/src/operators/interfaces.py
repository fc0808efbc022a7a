"""
Measurement model interface
"""
from abc import ABC, abstractmethod
from typing import Any, Dict, Tuple

import numpy as np

from ..engine import Tensor, ops
from ..exceptions import MeasurementMismatchError


class MeasurementModel(ABC):
    """Linear forward operator A with its adjoint and an approximate inverse

    ``forward`` and ``adjoint`` accept either one sample (shaped
    ``image_shape`` / ``measurement_shape``) or a leading batch axis.
    """

    kind: str = ''
    image_shape: Tuple[int, ...]
    measurement_shape: Tuple[int, ...]

    @abstractmethod
    def _forward_batch(self, x: np.ndarray) -> np.ndarray:
        """(B, *image_shape) -> (B, *measurement_shape)"""
        pass

    @abstractmethod
    def _adjoint_batch(self, y: np.ndarray) -> np.ndarray:
        """(B, *measurement_shape) -> (B, *image_shape)"""
        pass

    @abstractmethod
    def approximate_inverse(self, y: np.ndarray) -> np.ndarray:
        """Model-based reconstruction used as the conditioner's inversion layer"""
        pass

    @abstractmethod
    def describe(self) -> Dict[str, Any]:
        pass

    @property
    def image_size(self) -> int:
        return int(np.prod(self.image_shape))

    @property
    def measurement_size(self) -> int:
        return int(np.prod(self.measurement_shape))

    def _batched(self, array: np.ndarray, shape: Tuple[int, ...]) -> Tuple[np.ndarray, bool]:
        array = np.asarray(array)
        if array.shape == shape:
            return array[None], True
        if array.shape[1:] == shape:
            return array, False
        if array.ndim >= 1 and array[0].size == int(np.prod(shape)) and array.ndim > len(shape):
            return array.reshape((array.shape[0],) + shape), False
        raise MeasurementMismatchError(shape, array.shape)

    def check_measurements(self, y: np.ndarray) -> np.ndarray:
        """Validate a (batched) measurement array; returns it batched"""
        batch, _ = self._batched(y, self.measurement_shape)
        return batch

    def forward(self, x: np.ndarray) -> np.ndarray:
        batch, single = self._batched(x, self.image_shape)
        out = self._forward_batch(batch)
        return out[0] if single else out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        batch, single = self._batched(y, self.measurement_shape)
        out = self._adjoint_batch(batch)
        return out[0] if single else out

    def apply_tensor(self, x: Tensor) -> Tensor:
        """Recorded A x for a batch of images of any per-sample layout with image_size entries"""
        input_shape = x.shape
        batch = input_shape[0]

        def forward(array: np.ndarray) -> np.ndarray:
            return self._forward_batch(array.reshape((batch,) + self.image_shape))

        def adjoint(grad: np.ndarray) -> np.ndarray:
            return self._adjoint_batch(grad).reshape(input_shape)

        return ops.linear_map(x, forward, adjoint)
