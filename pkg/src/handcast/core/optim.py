"""Optimizers over named parameters.

A step updates parameters in place from their accumulated gradients, then
clears the gradients. Steps are deterministic given identical inputs; a
parameter without a populated gradient aborts the step naming the parameter.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .engine import MissingGradientError, NonFiniteError, Parameter

__all__ = ["Sgd", "Adam", "optimizer_step"]


class Sgd:
    """Plain SGD with optional momentum."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: Sequence[Parameter]) -> None:
        for p in params:
            g = _take_grad(p)
            if self.momentum:
                v = self._velocity.get(p.name)
                if v is None:
                    v = np.zeros_like(p.data)
                v = self.momentum * v + g
                self._velocity[p.name] = v
                g = v
            p.data -= (self.lr * g).astype(p.data.dtype, copy=False)
            p.grad = None


class Adam:
    """Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: Sequence[Parameter]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p in params:
            g = _take_grad(p)
            m = self._m.get(p.name)
            v = self._v.get(p.name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[p.name] = m
            self._v[p.name] = v
            update = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)
            p.grad = None


def _take_grad(p: Parameter) -> np.ndarray:
    if p.grad is None:
        raise MissingGradientError(f"parameter {p.name!r} has no gradient")
    if not np.all(np.isfinite(p.grad)):
        raise NonFiniteError(f"non-finite gradient in parameter {p.name!r}")
    return p.grad


def optimizer_step(optimizer, params: Iterable[Parameter]) -> None:
    """Apply one update: in-place parameter change, gradients zeroed after."""
    optimizer.step(list(params))
