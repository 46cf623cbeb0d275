"""Finite-difference verification of autodiff gradients.

Runs in 64-bit mode only: central differences are compared against the tape
gradient coordinate by coordinate and the worst relative error is returned.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .engine import NonFiniteError, Tape, Tensor

__all__ = ["finite_difference_check"]


def finite_difference_check(fn: Callable[..., Tensor], tensors: Sequence[Tensor],
                            epsilon: float = 1e-5) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``fn(*tensors)`` must return a scalar Tensor. Every tensor is checked at
    every coordinate; non-finite values abort with a location report.
    """
    for i, t in enumerate(tensors):
        if t.data.dtype != np.float64:
            raise ValueError(f"finite_difference_check requires 64-bit tensors (input {i} is {t.data.dtype})")
        t.requires_grad = True
        t.grad = None

    with Tape() as tape:
        out = fn(*tensors)
    if out.data.ndim != 0:
        raise ValueError(f"fn must return a scalar, got shape {out.shape}")
    tape.backward(out)

    worst = 0.0
    for ti, t in enumerate(tensors):
        autodiff = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            f_plus = fn(*tensors).item()
            flat[idx] = orig - epsilon
            f_minus = fn(*tensors).item()
            flat[idx] = orig
            if not np.isfinite(f_plus) or not np.isfinite(f_minus):
                loc = np.unravel_index(idx, t.data.shape)
                raise NonFiniteError(f"non-finite objective while perturbing input {ti} at {loc}")
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            ad = autodiff.reshape(-1)[idx]
            diff = abs(ad - fd)
            denom = max(abs(ad), abs(fd))
            err = diff / denom if denom > 1e-6 else diff
            if err > worst:
                worst = err
    return worst
