"""
Invertible layer interface
"""
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

from ..engine import ParameterStore, Tensor

Shape = Tuple[int, ...]


class InvertibleLayer(ABC):
    """Bijective layer with exact log-determinant

    ``forward`` maps x -> y and returns the log-det of that direction per
    sample; ``inverse`` maps y -> x and returns the log-det of the y -> x
    direction, which is the negated forward value.
    """

    name: str = ''
    conditional: bool = False
    param_names: List[str]

    @abstractmethod
    def forward(self, x: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        """Apply the layer and return (y, logdet)"""
        pass

    @abstractmethod
    def inverse(self, y: Tensor, params: ParameterStore, h: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        """Undo the layer and return (x, logdet of y -> x)"""
        pass

    @abstractmethod
    def output_shape(self, input_shape: Shape) -> Shape:
        """Per-sample output shape for a per-sample input shape"""
        pass

    @abstractmethod
    def describe(self) -> Dict[str, Any]:
        """Manifest entry for this layer"""
        pass
