"""Thin layer wrappers owning named parameters.

Kernels use seeded He-uniform init, biases start at zero. A layer's parameters
appear in creation order, which fixes checkpoint layout.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .engine import Parameter, Tensor, current_dtype, he_uniform

__all__ = ["Conv2d", "TransposedConv2d", "Dense"]


class Conv2d:
    def __init__(self, name: str, cin: int, cout: int, kernel: int,
                 stride: int, padding: int, rng: np.random.Generator):
        fan_in = cin * kernel * kernel
        self.kernel = Parameter(he_uniform(rng, (cout, cin, kernel, kernel), fan_in), f"{name}.kernel")
        self.bias = Parameter(np.zeros(cout, dtype=current_dtype()), f"{name}.bias")
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.kernel, self.bias, self.stride, self.padding)

    @property
    def params(self):
        return [self.kernel, self.bias]


class TransposedConv2d:
    def __init__(self, name: str, cin: int, cout: int, kernel: int,
                 stride: int, padding: int, rng: np.random.Generator):
        fan_in = cin * kernel * kernel
        self.kernel = Parameter(he_uniform(rng, (cin, cout, kernel, kernel), fan_in), f"{name}.kernel")
        self.bias = Parameter(np.zeros(cout, dtype=current_dtype()), f"{name}.bias")
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.transposed_conv2d(x, self.kernel, self.bias, self.stride, self.padding)

    @property
    def params(self):
        return [self.kernel, self.bias]


class Dense:
    def __init__(self, name: str, cin: int, cout: int, rng: np.random.Generator):
        self.weights = Parameter(he_uniform(rng, (cout, cin), cin), f"{name}.weights")
        self.bias = Parameter(np.zeros(cout, dtype=current_dtype()), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weights, self.bias)

    @property
    def params(self):
        return [self.weights, self.bias]
