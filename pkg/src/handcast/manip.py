"""Manipulation network: (current joints, current hand point, future hand point)
to the future joint state of one 7-DOF arm.

Inputs are normalized (joints to [-1,1] by their limits, pixels by the
reference resolution); outputs are raw radians, clamped to limits on the way
out. A base-control variant drops the current-joints input entirely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import core
from .core import ops
from .core.layers import Dense
from .synthworld import SimArm
from .types import DetectionSet, HandClass, HandPoint, JointState

__all__ = [
    "ManipConfig",
    "ManipNet",
    "build_manip_net",
    "detections_to_hand_point",
    "predict_joints",
    "manip_loss",
]

PAPER_HIDDEN_UNITS = (32, 32, 32, 16, 16, 16, 7)


@dataclass(frozen=True)
class ManipConfig:
    hidden_units: tuple = PAPER_HIDDEN_UNITS
    reference_resolution: tuple = (1280, 720)
    base_control: bool = False  # drop the current-joints input (width 4)

    def __post_init__(self):
        if self.hidden_units[-1] != 7:
            raise ValueError("last layer width must be 7 (one output per joint)")

    @property
    def input_width(self) -> int:
        return 4 if self.base_control else 11


class ManipNet:
    """Seven dense layers, ReLU between hidden layers, linear 7-wide output."""

    def __init__(self, config: ManipConfig, arm: SimArm, seed: int):
        self.config = config
        self.arm = arm
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.layers = []
        cin = config.input_width
        for i, units in enumerate(config.hidden_units):
            self.layers.append(Dense(f"manip.fc{i}", cin, units, rng))
            cin = units
        self._params = []
        for layer in self.layers:
            self._params.extend(layer.params)

    def forward(self, x: core.Tensor) -> core.Tensor:
        for layer in self.layers[:-1]:
            x = ops.relu(layer(x))
        return self.layers[-1](x)

    def normalize_inputs(self, joints: Optional[np.ndarray], hand_now: np.ndarray,
                         hand_future: np.ndarray) -> np.ndarray:
        """Build the (..., 11) or (..., 4) normalized input row(s)."""
        rw, rh = self.config.reference_resolution
        scale = np.array([rw, rh], dtype=np.float64)
        parts = []
        if not self.config.base_control:
            lim = self.arm.limits_array()
            parts.append(2.0 * (joints - lim[:, 0]) / (lim[:, 1] - lim[:, 0]) - 1.0)
        parts.append(np.asarray(hand_now, dtype=np.float64) / scale)
        parts.append(np.asarray(hand_future, dtype=np.float64) / scale)
        return np.concatenate(parts, axis=-1)

    def parameters(self) -> list:
        return list(self._params)

    def state_dict(self) -> dict:
        return {p.name: p.data for p in self._params}

    def load_state_dict(self, state: dict) -> None:
        for p in self._params:
            if p.name not in state:
                raise KeyError(f"checkpoint missing parameter {p.name!r}")
            arr = np.asarray(state[p.name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {p.name!r} shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def param_dtype(self):
        return self._params[0].data.dtype


def build_manip_net(config: ManipConfig, arm: SimArm, seed: int) -> ManipNet:
    return ManipNet(config, arm, seed)


def detections_to_hand_point(detections: DetectionSet, arm_class: HandClass,
                             fallback: HandPoint,
                             resolution: tuple = (1280, 720)) -> HandPoint:
    """Center of the highest-score box of the arm's class, or the fallback."""
    best = detections.best_of_class(arm_class)
    if best is None:
        return fallback
    u, v = best.center_px(resolution)
    return HandPoint(u=u, v=v)


def predict_joints(net: ManipNet, current: JointState, hand_now: HandPoint,
                   hand_future: HandPoint) -> JointState:
    """Future joint state, clamped to the arm's limits before return."""
    for p in (hand_now, hand_future):
        if not (np.isfinite(p.u) and np.isfinite(p.v)):
            raise ValueError("hand points must be finite")
    row = net.normalize_inputs(
        None if net.config.base_control else current.angles,
        np.array([hand_now.u, hand_now.v]),
        np.array([hand_future.u, hand_future.v]),
    )
    out = net.forward(core.Tensor(row.astype(net.param_dtype())))
    return JointState(net.arm.clamp(out.data.astype(np.float64)))


def manip_loss(net: ManipNet, batch: Sequence[tuple]) -> core.Tensor:
    """Mean squared error in rad^2 over (Z_t, Y_t, Y_t+d, Z_t+d) tuples."""
    rows = []
    targets = []
    for z_t, y_t, y_fut, z_fut in batch:
        rows.append(net.normalize_inputs(
            None if net.config.base_control else np.asarray(z_t, dtype=np.float64),
            np.asarray(y_t, dtype=np.float64),
            np.asarray(y_fut, dtype=np.float64),
        ))
        targets.append(np.asarray(z_fut, dtype=np.float64))
    x = core.Tensor(np.stack(rows).astype(net.param_dtype()))
    t = core.Tensor(np.stack(targets).astype(net.param_dtype()))
    pred = net.forward(x)
    return ops.mse_loss(pred, t)
