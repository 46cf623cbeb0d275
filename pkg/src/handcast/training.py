"""Staged training: detector, feature cache, future regressor, manipulation,
and the two learnable comparison baselines.

Order is fixed by the data dependencies: the detector first, then feature
caching with the frozen encoder, then the regressor, then manipulation from
robot logs. Every stage is deterministic under its seed, including shuffling.
Each stage writes its own checkpoint and never touches an earlier stage's.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import core
from .core import ops
from .core.checkpoint import load_checkpoint, read_ftr, save_checkpoint, write_ftr
from .core.engine import NonFiniteError
from .core.layers import Dense
from .detector import (
    HandNet,
    HandNetConfig,
    batched_detector_loss,
    build_hand_net,
    desk_config,
    detect_from_features_batch,
    encode_batch,
    generate_anchors,
    match_anchors,
)
from .manip import ManipConfig, ManipNet, build_manip_net, manip_loss
from .regressor import Regressor, RegressorConfig, build_regressor
from .synthworld import Episode, RobotLogRecord, SimArm, splitmix64
from .types import DetectionSet, HAND_CLASSES, HandBox, HandClass

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingAbort",
    "FeatureCache",
    "HandsOnlyNet",
    "train_hand_net",
    "build_feature_dataset",
    "save_feature_cache",
    "load_feature_cache",
    "train_regressor",
    "train_manipulation",
    "train_baseline_hands_only",
    "train_baseline_future_detector",
    "read_config_file",
    "write_config_file",
]

STAGES = ("handnet", "regressor", "manip", "hands_only", "future_detector")


class TrainingAbort(RuntimeError):
    """Raised when a stage hits non-finite numerics; last good state is kept."""


@dataclass
class TrainConfig:
    stage: str
    seed: int
    epochs: int = 3
    batch_size: int = 16
    learning_rate: float = 1e-3
    k: Optional[int] = None
    delta: Optional[int] = None
    max_steps: Optional[int] = None
    loss_target: Optional[float] = None
    fine_tune: bool = True  # future-detector baseline: start from the trained detector

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.stage == "regressor" and (self.k is None or self.delta is None):
            raise ValueError("regressor stage needs K and delta")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class TrainReport:
    stage: str
    seed: int
    epoch_losses: List[float]
    final_loss: float
    wall_clock_s: float
    config: dict
    checkpoint: Optional[str] = None
    notes: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = dict(self.__dict__)
        payload["epoch_losses"] = [float(x) for x in self.epoch_losses]
        payload["final_loss"] = float(self.final_loss)
        payload["wall_clock_s"] = round(float(self.wall_clock_s), 3)
        return json.dumps(payload, sort_keys=True, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _check_loss_finite(loss: core.Tensor, stage: str, step: int) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"{stage} loss became non-finite at step {step}")
    return value


def _maybe_save(state: dict, out_dir, name: str) -> Optional[str]:
    if out_dir is None:
        return None
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    save_checkpoint(path, state)
    return str(path)


# ----------------------------------------------------------------------------
# Stage 1: detector


def _detector_epochs(net: HandNet, pixels: np.ndarray, assignments: list,
                     config: TrainConfig, stage: str, out_dir, ckpt_name: str,
                     report_extra: Optional[List[str]] = None) -> TrainReport:
    """Shared mini-batch loop for the detector and the future-detector baseline."""
    rng = np.random.default_rng(np.random.PCG64(splitmix64(config.seed, 0xBEEF)))
    opt = core.Adam(lr=config.learning_rate)
    params = net.parameters()
    n = pixels.shape[0]
    losses: List[float] = []
    notes = list(report_extra or [])
    step = 0
    start = time.perf_counter()
    decay_epoch = max(1, int(config.epochs * 0.6))
    last_good = {k: v.copy() for k, v in net.state_dict().items()}
    try:
        for epoch in range(config.epochs):
            opt.lr = config.learning_rate * (1.0 if epoch < decay_epoch else 1 / 3)
            order = rng.permutation(n)
            epoch_losses = []
            for b0 in range(0, n, config.batch_size):
                idx = order[b0:b0 + config.batch_size]
                with core.Tape() as tape:
                    x = core.Tensor(pixels[idx])
                    raw = net.head_outputs(net.features(x))
                    loss = batched_detector_loss(raw, [assignments[i] for i in idx])
                value = _check_loss_finite(loss, stage, step)
                tape.backward(loss)
                opt.step(params)
                epoch_losses.append(value)
                step += 1
                if config.max_steps is not None and step >= config.max_steps:
                    break
            losses.append(float(np.mean(epoch_losses)))
            last_good = {k: v.copy() for k, v in net.state_dict().items()}
            if config.loss_target is not None and losses[-1] < config.loss_target:
                notes.append(f"reached loss target after epoch {epoch + 1}")
                break
            if config.max_steps is not None and step >= config.max_steps:
                break
    except NonFiniteError as exc:
        path = _maybe_save(last_good, out_dir, ckpt_name)
        raise TrainingAbort(f"{exc} (last good checkpoint: {path})") from exc

    if config.loss_target is not None and losses and losses[-1] >= config.loss_target:
        warnings.warn(f"{stage}: final loss {losses[-1]:.4f} above target {config.loss_target}")
        notes.append("loss target not reached")
    path = _maybe_save(net.state_dict(), out_dir, ckpt_name)
    report = TrainReport(stage=stage, seed=config.seed, epoch_losses=losses,
                         final_loss=losses[-1] if losses else float("nan"),
                         wall_clock_s=time.perf_counter() - start,
                         config=config.to_dict(), checkpoint=path, notes=notes)
    if path:
        report.save(Path(path).with_suffix(".report.json"))
    return report


def train_hand_net(config: TrainConfig, detector_set: Episode,
                   net_config: Optional[HandNetConfig] = None,
                   out_dir=None) -> Tuple[HandNet, TrainReport]:
    """Train the hand network on the labeled synthetic detector set."""
    if len(detector_set) == 0:
        raise ValueError("detector set is empty")
    net_config = net_config or desk_config()
    net = build_hand_net(net_config, config.seed)
    anchors = generate_anchors(net_config)
    pixels = np.stack([f.pixels for f in detector_set.frames])
    assignments = [match_anchors(anchors, t) for t in detector_set.truth]
    return net, _detector_epochs(net, pixels, assignments, config, "handnet",
                                 out_dir, "handnet.ckpt")


# ----------------------------------------------------------------------------
# Stage 2: feature cache (frozen encoder; frames only, no labels anywhere)


@dataclass
class FeatureCache:
    """Frame features per episode plus the (episode, t) pair index.

    Deliberately holds nothing but frame-derived arrays: the future regressor
    trains on frames alone.
    """

    features: Dict[str, np.ndarray]  # episode_id -> (L, C, H', W') float32
    k: int
    delta: int
    bottleneck_shape: tuple
    pairs: List[tuple] = field(default_factory=list)  # (episode_id, t) with full window+target

    def window(self, episode_id: str, t: int) -> np.ndarray:
        feats = self.features[episode_id]
        k = self.k
        # newest frame first in the channel stack
        return np.concatenate([feats[t - i] for i in range(k)], axis=0)

    def target(self, episode_id: str, t: int) -> np.ndarray:
        return self.features[episode_id][t + self.delta]

    def with_k(self, k: int) -> "FeatureCache":
        """Re-index the same encoded features for a different window length."""
        pairs = []
        for eid, feats in self.features.items():
            pairs.extend((eid, t) for t in range(k - 1, feats.shape[0] - self.delta))
        return FeatureCache(features=self.features, k=k, delta=self.delta,
                            bottleneck_shape=self.bottleneck_shape, pairs=pairs)


def build_feature_dataset(net: HandNet, episodes: Sequence[Episode], k: int, delta: int,
                          cache_dir=None, batch_size: int = 32) -> FeatureCache:
    """Encode every frame once with the frozen encoder and index training pairs."""
    features: Dict[str, np.ndarray] = {}
    pairs: List[tuple] = []
    bottleneck = net.config.bottleneck_shape
    for ep in episodes:
        if len(ep) < k + delta + 1:
            warnings.warn(f"episode {ep.episode_id} shorter than K+delta+1; skipped")
            continue
        pixels = np.stack([f.pixels for f in ep.frames])
        feats = np.concatenate([
            encode_batch(net, pixels[i:i + batch_size]).astype(np.float32)
            for i in range(0, len(ep), batch_size)
        ])
        features[ep.episode_id] = feats
        pairs.extend((ep.episode_id, t) for t in range(k - 1, len(ep) - delta))
    cache = FeatureCache(features=features, k=k, delta=delta,
                         bottleneck_shape=bottleneck, pairs=pairs)
    if cache_dir is not None:
        save_feature_cache(cache, cache_dir)
    return cache


def save_feature_cache(cache: FeatureCache, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "k": cache.k,
        "delta": cache.delta,
        "bottleneck_shape": list(cache.bottleneck_shape),
        "episodes": {eid: int(f.shape[0]) for eid, f in cache.features.items()},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    for eid, feats in cache.features.items():
        ep_dir = directory / eid
        ep_dir.mkdir(exist_ok=True)
        for t in range(feats.shape[0]):
            write_ftr(ep_dir / f"feat_{t:05d}.ftr", feats[t])


def load_feature_cache(directory) -> FeatureCache:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    features = {}
    for eid, n in sorted(manifest["episodes"].items()):
        features[eid] = np.stack([
            read_ftr(directory / eid / f"feat_{t:05d}.ftr") for t in range(n)
        ])
    k, delta = manifest["k"], manifest["delta"]
    pairs = []
    for eid, feats in features.items():
        pairs.extend((eid, t) for t in range(k - 1, feats.shape[0] - delta))
    return FeatureCache(features=features, k=k, delta=delta,
                        bottleneck_shape=tuple(manifest["bottleneck_shape"]), pairs=pairs)


# ----------------------------------------------------------------------------
# Stage 3: future regressor


def train_regressor(config: TrainConfig, cache: FeatureCache,
                    out_dir=None) -> Tuple[Regressor, TrainReport]:
    """Fit the future regressor to the cached feature pairs; encoder untouched."""
    if config.k != cache.k or config.delta != cache.delta:
        raise ValueError(
            f"config K/delta ({config.k}/{config.delta}) do not match cache ({cache.k}/{cache.delta})"
        )
    reg_config = RegressorConfig(k=cache.k, delta=cache.delta, scale_divisor=8, context_kernel=7)
    reg = build_regressor(reg_config, cache.bottleneck_shape, config.seed)
    rng = np.random.default_rng(np.random.PCG64(splitmix64(config.seed, 0xCAFE)))
    opt = core.Adam(lr=config.learning_rate)
    params = reg.parameters()
    pairs = cache.pairs
    losses: List[float] = []
    step = 0
    start = time.perf_counter()
    ckpt_name = f"regressor_k{cache.k}.ckpt"
    last_good = {k: v.copy() for k, v in reg.state_dict().items()}
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(pairs))
            epoch_losses = []
            for b0 in range(0, len(pairs), config.batch_size):
                idx = order[b0:b0 + config.batch_size]
                xs = np.stack([cache.window(*pairs[i]) for i in idx])
                ts = np.stack([cache.target(*pairs[i]) for i in idx])
                with core.Tape() as tape:
                    pred = reg.forward(core.Tensor(xs))
                    loss = ops.mse_loss(pred, core.Tensor(ts))
                value = _check_loss_finite(loss, "regressor", step)
                tape.backward(loss)
                opt.step(params)
                epoch_losses.append(value)
                step += 1
                if config.max_steps is not None and step >= config.max_steps:
                    break
            losses.append(float(np.mean(epoch_losses)))
            last_good = {k: v.copy() for k, v in reg.state_dict().items()}
            if config.max_steps is not None and step >= config.max_steps:
                break
    except NonFiniteError as exc:
        path = _maybe_save(last_good, out_dir, ckpt_name)
        raise TrainingAbort(f"{exc} (last good checkpoint: {path})") from exc

    path = _maybe_save(reg.state_dict(), out_dir, ckpt_name)
    report = TrainReport(stage="regressor", seed=config.seed, epoch_losses=losses,
                         final_loss=losses[-1], wall_clock_s=time.perf_counter() - start,
                         config=config.to_dict(), checkpoint=path)
    if path:
        report.save(Path(path).with_suffix(".report.json"))
    return reg, report


# ----------------------------------------------------------------------------
# Stage 4: manipulation


def log_tuples(logs: Sequence[Sequence[RobotLogRecord]], delta: int) -> list:
    """(Z_t, Y_t, Y_t+d, Z_t+d) tuples from unlabeled logs; short logs skipped."""
    tuples = []
    for records in logs:
        if len(records) <= delta:
            warnings.warn("log shorter than delta; skipped")
            continue
        for t in range(len(records) - delta):
            now, fut = records[t], records[t + delta]
            tuples.append((now.joints.angles, np.array([now.hand.u, now.hand.v]),
                           np.array([fut.hand.u, fut.hand.v]), fut.joints.angles))
    return tuples


def train_manipulation(config: TrainConfig, logs: Sequence[Sequence[RobotLogRecord]],
                       arm: SimArm, manip_config: Optional[ManipConfig] = None,
                       out_dir=None) -> Tuple[ManipNet, TrainReport]:
    """Fit the manipulation network to log tuples with a consistent delta."""
    if not logs:
        raise ValueError("need at least one log sequence")
    delta = config.delta if config.delta is not None else 30
    tuples = log_tuples(logs, delta)
    net = build_manip_net(manip_config or ManipConfig(), arm, config.seed)
    rng = np.random.default_rng(np.random.PCG64(splitmix64(config.seed, 0xD00D)))
    opt = core.Adam(lr=config.learning_rate)
    params = net.parameters()
    losses: List[float] = []
    step = 0
    start = time.perf_counter()
    name = "manip_base.ckpt" if net.config.base_control else "manip.ckpt"
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(tuples))
            epoch_losses = []
            for b0 in range(0, len(tuples), config.batch_size):
                idx = order[b0:b0 + config.batch_size]
                with core.Tape() as tape:
                    loss = manip_loss(net, [tuples[i] for i in idx])
                value = _check_loss_finite(loss, "manip", step)
                tape.backward(loss)
                opt.step(params)
                epoch_losses.append(value)
                step += 1
                if config.max_steps is not None and step >= config.max_steps:
                    break
            losses.append(float(np.mean(epoch_losses)))
            if config.max_steps is not None and step >= config.max_steps:
                break
    except NonFiniteError as exc:
        raise TrainingAbort(str(exc)) from exc

    path = _maybe_save(net.state_dict(), out_dir, name)
    report = TrainReport(stage="manip", seed=config.seed, epoch_losses=losses,
                         final_loss=losses[-1], wall_clock_s=time.perf_counter() - start,
                         config=config.to_dict(), checkpoint=path)
    if path:
        report.save(Path(path).with_suffix(".report.json"))
    return net, report


# ----------------------------------------------------------------------------
# Baseline (ii): hands only


class HandsOnlyNet:
    """Dense net from the current 4-hand vector to future center coordinates.

    Input is (cx, cy, presence) per class (12 wide); output is (cx, cy) per
    class (8 wide). Absent classes are masked out of the loss.
    """

    HIDDEN = (32, 32, 32, 16, 16, 16)

    def __init__(self, seed: int):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.layers = []
        cin = 12
        for i, units in enumerate(self.HIDDEN):
            self.layers.append(Dense(f"hands_only.fc{i}", cin, units, rng))
            cin = units
        self.layers.append(Dense("hands_only.out", cin, 8, rng))
        self._params = []
        for layer in self.layers:
            self._params.extend(layer.params)

    def forward(self, x: core.Tensor) -> core.Tensor:
        for layer in self.layers[:-1]:
            x = ops.relu(layer(x))
        return self.layers[-1](x)

    def parameters(self) -> list:
        return list(self._params)

    def state_dict(self) -> dict:
        return {p.name: p.data for p in self._params}

    def load_state_dict(self, state: dict) -> None:
        for p in self._params:
            arr = np.asarray(state[p.name], dtype=p.data.dtype)
            p.data = arr.copy()


def detection_log_rows(detections: Sequence[DetectionSet]) -> tuple:
    """Per-frame (12,) input rows and presence masks from detected boxes."""
    rows = np.zeros((len(detections), 12), dtype=np.float32)
    present = np.zeros((len(detections), 4), dtype=bool)
    for t, det in enumerate(detections):
        for ci, cls in enumerate(HAND_CLASSES):
            best = det.best_of_class(cls)
            if best is not None:
                rows[t, ci * 3:ci * 3 + 2] = (best.cx, best.cy)
                rows[t, ci * 3 + 2] = 1.0
                present[t, ci] = True
    return rows, present


def train_baseline_hands_only(config: TrainConfig, episodes: Sequence[Episode],
                              net: HandNet, delta: int,
                              out_dir=None) -> Tuple[HandsOnlyNet, TrainReport]:
    """Train the hands-only future regressor on detected hand locations.

    Mirrors the paper's protocol: hand locations are extracted with the trained
    hand network and logged per frame, then a dense net maps the current
    log row to future centers with a masked loss on absent hands.
    """
    xs, ys, masks = [], [], []
    for ep in episodes:
        pixels = np.stack([f.pixels for f in ep.frames])
        feats = np.concatenate([encode_batch(net, pixels[i:i + 32]) for i in range(0, len(ep), 32)])
        dets = detect_from_features_batch(net, feats)
        rows, present = detection_log_rows(dets)
        for t in range(len(ep) - delta):
            both = present[t] & present[t + delta]
            if not both.any():
                continue
            xs.append(rows[t])
            target = np.zeros(8, dtype=np.float32)
            mask = np.zeros(8, dtype=np.float32)
            for ci in range(4):
                if both[ci]:
                    target[ci * 2:ci * 2 + 2] = rows[t + delta, ci * 3:ci * 3 + 2]
                    mask[ci * 2:ci * 2 + 2] = 1.0
            ys.append(target)
            masks.append(mask)
    if not xs:
        raise ValueError("no training rows; detector found no hands")
    xs_arr, ys_arr, mask_arr = np.stack(xs), np.stack(ys), np.stack(masks)

    model = HandsOnlyNet(config.seed)
    rng = np.random.default_rng(np.random.PCG64(splitmix64(config.seed, 0xF00D)))
    opt = core.Adam(lr=config.learning_rate)
    losses = []
    start = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(xs_arr))
        epoch_losses = []
        for b0 in range(0, len(xs_arr), config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            with core.Tape() as tape:
                pred = model.forward(core.Tensor(xs_arr[idx]))
                # coordinates live in [0,1], so this stays in the quadratic branch
                loss = ops.smooth_l1_loss(pred, core.Tensor(ys_arr[idx]), mask_arr[idx])
            value = _check_loss_finite(loss, "hands_only", step)
            tape.backward(loss)
            opt.step(model.parameters())
            epoch_losses.append(value)
            step += 1
        losses.append(float(np.mean(epoch_losses)))
    path = _maybe_save(model.state_dict(), out_dir, "hands_only.ckpt")
    report = TrainReport(stage="hands_only", seed=config.seed, epoch_losses=losses,
                         final_loss=losses[-1], wall_clock_s=time.perf_counter() - start,
                         config=config.to_dict(), checkpoint=path)
    if path:
        report.save(Path(path).with_suffix(".report.json"))
    return model, report


def hands_only_predict(model: HandsOnlyNet, current: DetectionSet) -> DetectionSet:
    """Future boxes: predicted centers with the current box's size and score."""
    rows, present = detection_log_rows([current])
    out = model.forward(core.Tensor(rows[0])).data
    boxes = []
    for ci, cls in enumerate(HAND_CLASSES):
        if not present[0, ci]:
            continue
        src = current.best_of_class(cls)
        cx, cy = float(out[ci * 2]), float(out[ci * 2 + 1])
        if cx + src.w / 2 <= 0 or cx - src.w / 2 >= 1 or cy + src.h / 2 <= 0 or cy - src.h / 2 >= 1:
            continue
        boxes.append(HandBox(cls, cx, cy, src.w, src.h, src.score))
    return DetectionSet(boxes=boxes, frame_index=current.frame_index)


# ----------------------------------------------------------------------------
# Baseline (iii)/(iv): detector trained on future annotations


def train_baseline_future_detector(config: TrainConfig, episodes: Sequence[Episode],
                                   delta: int, base_net: Optional[HandNet] = None,
                                   net_config: Optional[HandNetConfig] = None,
                                   out_dir=None) -> Tuple[HandNet, TrainReport]:
    """Train a hand network against labels shifted delta frames into the future.

    ``fine_tune`` starts from a trained detector's weights; otherwise the
    network trains from scratch.
    """
    net_config = net_config or (base_net.config if base_net else desk_config())
    net = build_hand_net(net_config, config.seed)
    notes = []
    if config.fine_tune and base_net is not None:
        net.load_state_dict(base_net.state_dict())
        notes.append("fine-tuned from trained detector")
    anchors = generate_anchors(net_config)
    frames, truths = [], []
    for ep in episodes:
        for t in range(len(ep) - delta):
            frames.append(ep.frames[t].pixels)
            truths.append(ep.truth[t + delta])
    pixels = np.stack(frames)
    assignments = [match_anchors(anchors, t) for t in truths]
    return net, _detector_epochs(net, pixels, assignments, config, "future_detector",
                                 out_dir, "future_detector.ckpt", notes)


# ----------------------------------------------------------------------------
# Flat-section key/value config files


def read_config_file(path) -> Dict[str, Dict[str, object]]:
    """Parse a flat [section] key = value file; values are int/float/bool/str."""
    sections: Dict[str, Dict[str, object]] = {}
    current = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line or current is None:
            raise ValueError(f"{path}:{lineno}: expected 'key = value' inside a section")
        key, value = (part.strip() for part in line.split("=", 1))
        sections[current][key] = _parse_value(value)
    return sections


def _parse_value(text: str):
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text.strip('"')


def write_config_file(path, sections: Dict[str, Dict[str, object]]) -> None:
    lines = []
    for name in sections:
        lines.append(f"[{name}]")
        for key, value in sections[name].items():
            lines.append(f"{key} = {value}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
