"""Minimal deterministic tensor engine with tape-based reverse-mode autodiff.

Values are float32 by default; :func:`use_float64` switches new tensors to
float64 for gradient and adjoint checks. Operations record themselves on the
active :class:`Tape`; with no tape active, ops run forward-only.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "MissingGradientError",
    "active_tape",
    "current_dtype",
    "use_float64",
    "tensor",
    "he_uniform",
]


class ShapeError(ValueError):
    """Raised when operand shapes disagree; the message names the offending dimension."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf is detected in values or gradients."""


class MissingGradientError(RuntimeError):
    """Raised by an optimizer step when a parameter has no populated gradient."""


_DTYPE = np.float32


def current_dtype():
    return _DTYPE


@contextlib.contextmanager
def use_float64():
    """Context manager switching tensor creation to 64-bit (for grad checks)."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    """A rank-N numeric array plus an optional same-shape gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match value shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def check_finite(self, where: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            bad = np.argwhere(~np.isfinite(self.data))[0]
            raise NonFiniteError(f"non-finite value in {where} at index {tuple(bad)}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable tensor; names are unique within a model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Create a tensor in the current precision."""
    return Tensor(np.asarray(data, dtype=_DTYPE), requires_grad=requires_grad)


# ----------------------------------------------------------------------------
# Tape


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.output = output
        self.inputs = tuple(inputs)
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of executed differentiable operations.

    Backward traverses in exact reverse execution order, so replaying an
    identical forward pass yields bit-identical gradients.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self._records.append(_Record(output, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of a scalar loss into every requires_grad input."""
        if loss.data.ndim != 0:
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data):
            raise NonFiniteError("loss is non-finite; aborting backward")
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self._records):
            out_grad = rec.output.grad
            if out_grad is None or not rec.output.requires_grad:
                continue
            grads = rec.backward(out_grad)
            for inp, g in zip(rec.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.accumulate_grad(g)


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """He-uniform init for conv/dense kernels; draws in current precision."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(_DTYPE)
