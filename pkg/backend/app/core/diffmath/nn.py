"""
Parameterized building blocks.

Modules discover their parameters by walking attributes, so a layer only has
to assign Parameters, Modules or lists of Modules to itself.
"""

import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.diffmath.functional import conv2d, layer_norm
from app.core.diffmath.tensor import DTensor, get_default_dtype, matmul, relu


class Parameter(DTensor):
    """Trainable tensor"""

    __slots__ = ()

    def __init__(self, values, name: Optional[str] = None):
        super().__init__(values, requires_grad=True, name=name)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.values for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(get_default_dtype())


class Linear(Module):
    """y = x @ W + b over the last axis"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 zero_init: bool = False, bias_value: Optional[float] = None):
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            w = np.zeros((in_features, out_features), dtype=get_default_dtype())
            b = np.zeros(out_features, dtype=get_default_dtype())
        else:
            w = kaiming_uniform(rng, (in_features, out_features), in_features)
            b = kaiming_uniform(rng, (out_features,), in_features)
        if bias_value is not None:
            b = np.full(out_features, bias_value, dtype=get_default_dtype())
        self.weight = Parameter(w)
        self.bias = Parameter(b)

    def __call__(self, x: DTensor) -> DTensor:
        return matmul(x, self.weight) + self.bias


class MLP(Module):
    """Stack of Linear layers with ReLU between them"""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, num_layers: int,
                 rng: np.random.Generator, zero_last: bool = False):
        dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [out_dim]
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, zero_init=zero_last and i == num_layers - 1)
            for i in range(num_layers)
        ]

    def __call__(self, x: DTensor) -> DTensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=get_default_dtype()))
        self.beta = Parameter(np.zeros(dim, dtype=get_default_dtype()))

    def __call__(self, x: DTensor) -> DTensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(kaiming_uniform(rng, (kernel_size, kernel_size, in_channels, out_channels), fan_in))
        self.bias = Parameter(kaiming_uniform(rng, (out_channels,), fan_in))

    def __call__(self, x: DTensor) -> DTensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)
