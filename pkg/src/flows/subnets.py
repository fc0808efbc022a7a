"""
Coupling subnetworks

Both variants end in a zero-initialised layer so a freshly built coupling
is the identity map.
"""
from typing import List

from ..engine import ParameterStore, Tensor, ops


class ConvSubnet:
    """conv(k) -> leaky ReLU -> conv(k), same padding"""

    def __init__(
        self,
        name: str,
        params: ParameterStore,
        in_channels: int,
        hidden: int,
        out_channels: int,
        kernel: int = 3,
    ):
        if kernel not in (1, 3):
            raise ValueError(f"Subnet kernel must be 1 or 3, got {kernel}")
        self.name = name
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * kernel * kernel
        params.create(f"{name}.conv1.weight", (hidden, in_channels, kernel, kernel), init='he', fan_in=fan_in)
        params.create(f"{name}.conv1.bias", (hidden,), init='zeros')
        params.create(f"{name}.conv2.weight", (out_channels, hidden, kernel, kernel), init='zeros')
        params.create(f"{name}.conv2.bias", (out_channels,), init='zeros')

    @property
    def param_names(self) -> List[str]:
        return [f"{self.name}.{layer}.{kind}" for layer in ('conv1', 'conv2') for kind in ('weight', 'bias')]

    def __call__(self, x: Tensor, params: ParameterStore) -> Tensor:
        hidden = ops.bias_add(ops.conv2d(x, params.tensor(f"{self.name}.conv1.weight")), params.tensor(f"{self.name}.conv1.bias"))
        hidden = ops.leaky_relu(hidden)
        out = ops.conv2d(hidden, params.tensor(f"{self.name}.conv2.weight"))
        return ops.bias_add(out, params.tensor(f"{self.name}.conv2.bias"))


class DenseSubnet:
    """dense -> leaky ReLU -> dense, for flattened stages"""

    def __init__(self, name: str, params: ParameterStore, in_features: int, hidden: int, out_features: int):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        params.create(f"{name}.fc1.weight", (in_features, hidden), init='he', fan_in=in_features)
        params.create(f"{name}.fc1.bias", (hidden,), init='zeros')
        params.create(f"{name}.fc2.weight", (hidden, out_features), init='zeros')
        params.create(f"{name}.fc2.bias", (out_features,), init='zeros')

    @property
    def param_names(self) -> List[str]:
        return [f"{self.name}.{layer}.{kind}" for layer in ('fc1', 'fc2') for kind in ('weight', 'bias')]

    def __call__(self, x: Tensor, params: ParameterStore) -> Tensor:
        hidden = ops.bias_add(ops.matmul(x, params.tensor(f"{self.name}.fc1.weight")), params.tensor(f"{self.name}.fc1.bias"))
        hidden = ops.leaky_relu(hidden)
        out = ops.matmul(hidden, params.tensor(f"{self.name}.fc2.weight"))
        return ops.bias_add(out, params.tensor(f"{self.name}.fc2.bias"))
