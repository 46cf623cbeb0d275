"""Fully convolutional future regression over bottleneck feature maps.

Maps a channel-stacked window of K past feature maps to the feature map
``delta`` frames ahead. Every layer uses "same" spatial padding, so the output
shape always equals a single bottleneck map and the network transfers across
frame sizes unchanged. Composing it with the detector's box half yields future
hand boxes without ever touching labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import core
from .core import ops
from .core.layers import Conv2d
from .detector import HandNet, _calibrate_stack, detect_from_features, encode
from .types import DetectionSet, FeatureMap, FrameImage

__all__ = [
    "RegressorConfig",
    "FeatureWindow",
    "Regressor",
    "build_regressor",
    "stack_window",
    "regress_future",
    "regressor_loss",
    "predict_future_boxes",
    "desk_regressor_config",
]

PAPER_TRUNK_FILTERS = (256,) * 7


@dataclass(frozen=True)
class RegressorConfig:
    k: int = 1
    delta: int = 30
    trunk_filters: tuple = PAPER_TRUNK_FILTERS
    trunk_kernel: int = 5
    context_filters: int = 1024
    context_kernel: int = 13
    scale_divisor: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("window length K must be >= 1")
        if self.delta < 1:
            raise ValueError("prediction horizon delta must be >= 1")
        if self.trunk_kernel % 2 == 0 or self.context_kernel % 2 == 0:
            raise ValueError("same-padding layers need odd kernels")

    @property
    def effective_trunk_filters(self) -> tuple:
        return tuple(max(4, f // self.scale_divisor) for f in self.trunk_filters)

    @property
    def effective_context_filters(self) -> int:
        return max(4, self.context_filters // self.scale_divisor)


def desk_regressor_config(k: int, delta: int = 10, **overrides) -> RegressorConfig:
    """Desk preset: 1-second horizon at 10 fps, 7x7 context on the small map."""
    kwargs = dict(k=k, delta=delta, scale_divisor=8, context_kernel=7)
    kwargs.update(overrides)
    return RegressorConfig(**kwargs)


@dataclass
class FeatureWindow:
    """K consecutive feature maps from one episode, oldest first in the list."""

    maps: List[FeatureMap]

    def __post_init__(self):
        if not self.maps:
            raise ValueError("feature window cannot be empty")
        indices = [m.source_frame for m in self.maps]
        if indices != list(range(indices[0], indices[0] + len(indices))):
            raise ValueError(f"window frames must be consecutive, got {indices}")

    def __len__(self) -> int:
        return len(self.maps)


class Regressor:
    """Trunk convs + wide context layer + 1x1 head, all "same" padded."""

    def __init__(self, config: RegressorConfig, bottleneck_shape: tuple, seed: int):
        self.config = config
        self.bottleneck_shape = tuple(bottleneck_shape)
        c, h, w = self.bottleneck_shape
        ck = config.context_kernel
        if ck > h + 2 * (ck // 2) or ck > w + 2 * (ck // 2):
            raise ValueError(f"context kernel {ck} exceeds the padded {h}x{w} feature map")

        rng = np.random.default_rng(np.random.PCG64(seed))
        self.layers = []
        cin = config.k * c
        tk = config.trunk_kernel
        for i, f in enumerate(config.effective_trunk_filters):
            self.layers.append(Conv2d(f"regressor.trunk.conv{i}", cin, f, tk, 1, tk // 2, rng))
            cin = f
        self.context = Conv2d("regressor.context", cin, config.effective_context_filters,
                              ck, 1, ck // 2, rng)
        self.head = Conv2d("regressor.head", config.effective_context_filters, c, 1, 1, 0, rng)

        self._params = []
        for layer in [*self.layers, self.context, self.head]:
            self._params.extend(layer.params)
        _calibrate_stack([*self.layers, self.context], (config.k * c, h, w), seed)

    @property
    def input_channels(self) -> int:
        return self.config.k * self.bottleneck_shape[0]

    def forward(self, x: core.Tensor) -> core.Tensor:
        expected = self.input_channels
        got = x.data.shape[-3]
        if got != expected:
            raise ValueError(f"regressor input channel dim {got} != K x bottleneck = {expected}")
        for layer in self.layers:
            x = ops.relu(layer(x))
        x = ops.relu(self.context(x))
        return self.head(x)

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

    @property
    def num_conv_layers(self) -> int:
        return len(self.layers) + 2


def build_regressor(config: RegressorConfig, bottleneck_shape: tuple, seed: int) -> Regressor:
    """Construct the future regressor for a known bottleneck shape."""
    return Regressor(config, bottleneck_shape, seed)


def stack_window(window: FeatureWindow) -> np.ndarray:
    """Channel-stack a window, newest frame in the first channel block.

    Slicing the result at channel block i recovers ``window.maps[-1 - i]``.
    """
    return np.concatenate([m.values for m in reversed(window.maps)], axis=0)


def regress_future(reg: Regressor, stacked: np.ndarray) -> FeatureMap:
    """Predict the feature map ``delta`` frames ahead of the window's last frame."""
    x = core.Tensor(np.asarray(stacked, dtype=reg.param_dtype()))
    out = reg.forward(x)
    if out.data.shape != reg.bottleneck_shape:
        raise ValueError(f"regressed shape {out.data.shape} != bottleneck {reg.bottleneck_shape}")
    return FeatureMap(values=out.data, source_frame=-1)


def regressor_loss(reg: Regressor, batch: Sequence[tuple]) -> core.Tensor:
    """Mean squared error of regressed vs true future maps over a batch.

    The batch holds (stacked window array, target feature array) pairs built
    from frames alone; no label of any kind enters this path.
    """
    xs = np.stack([np.asarray(w, dtype=reg.param_dtype()) for w, _ in batch])
    ts = np.stack([np.asarray(t, dtype=reg.param_dtype()) for _, t in batch])
    pred = reg.forward(core.Tensor(xs))
    return ops.mse_loss(pred, core.Tensor(ts))


def predict_future_boxes(net: HandNet, reg: Regressor, frames: Sequence[FrameImage],
                         conf_threshold: float = 0.5, nms_threshold: float = 0.45) -> DetectionSet:
    """Future detections from K consecutive frames: h(r([g(x_t), ..., g(x_t-K+1)])).

    Bit-identical to staging encode, stack_window, regress_future and
    detect_from_features by hand.
    """
    if len(frames) != reg.config.k:
        raise ValueError(f"need exactly K={reg.config.k} frames, got {len(frames)}")
    window = FeatureWindow(maps=[encode(net, f) for f in frames])
    future = regress_future(reg, stack_window(window))
    future.source_frame = frames[-1].frame_index + reg.config.delta
    return detect_from_features(net, future, conf_threshold, nms_threshold)
