"""Hand representation network: encoder bottleneck plus anchor-based box head.

The network splits into two separately addressable halves. The feature half
maps a frame to the bottleneck feature map: two stride-2 backbone convs, then
five 5x5 encoder convs of which only the last has stride 2 (no pooling
anywhere). The box half maps any bottleneck feature map to detections: five
deconvs mirroring the encoder, then a single-scale anchor head whose grid
matches the bottleneck cells. ``detect`` is bit-identical to composing
``encode`` and ``detect_from_features``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import core
from .core import ops
from .core.layers import Conv2d, Dense, TransposedConv2d
from .types import DetectionSet, FeatureMap, FrameImage, HandBox, hand_class_from_index

__all__ = [
    "HandNetConfig",
    "HandNet",
    "AnchorGrid",
    "MatchAssignment",
    "build_hand_net",
    "encode",
    "detect",
    "detect_from_features",
    "generate_anchors",
    "match_anchors",
    "detector_loss",
    "batched_detector_loss",
    "encode_boxes",
    "decode_boxes",
    "nms",
    "iou_matrix",
    "desk_config",
]

PAPER_ENCODER_FILTERS = (512, 256, 128, 64, 256)
PAPER_DECODER_FILTERS = (256, 64, 128, 256, 512)


@dataclass(frozen=True)
class HandNetConfig:
    input_size: tuple = (96, 96)
    scale_divisor: int = 1
    encoder_filters: tuple = PAPER_ENCODER_FILTERS
    decoder_filters: tuple = PAPER_DECODER_FILTERS
    kernel: int = 5
    bottleneck_stride: int = 2
    backbone_filters: tuple = (64, 128)
    backbone_kernel: int = 3
    anchor_aspects: tuple = (0.75, 1.0, 1.33)
    anchor_base_scale: float = 0.2
    num_classes: int = 5  # 4 hand classes + background
    head_kernel: int = 3

    def __post_init__(self):
        if tuple(self.decoder_filters) != tuple(reversed(self.encoder_filters)):
            raise ValueError("decoder_filters must mirror encoder_filters in reverse order")
        if self.scale_divisor < 1:
            raise ValueError("scale_divisor must be >= 1")
        if self.bottleneck_stride != 2:
            raise ValueError("the encoder bottleneck layer uses stride 2")
        down = self.total_downsample
        if self.input_size[0] % down or self.input_size[1] % down:
            raise ValueError(f"input size {self.input_size} must be divisible by {down}")

    def _scaled(self, filters: Sequence[int]) -> tuple:
        return tuple(max(4, f // self.scale_divisor) for f in filters)

    @property
    def effective_encoder_filters(self) -> tuple:
        return self._scaled(self.encoder_filters)

    @property
    def effective_decoder_filters(self) -> tuple:
        return self._scaled(self.decoder_filters)

    @property
    def effective_backbone_filters(self) -> tuple:
        return self._scaled(self.backbone_filters)

    @property
    def total_downsample(self) -> int:
        return (2 ** len(self.backbone_filters)) * self.bottleneck_stride

    @property
    def bottleneck_shape(self) -> tuple:
        h, w = self.input_size
        d = self.total_downsample
        return (self.effective_encoder_filters[-1], h // d, w // d)

    @property
    def head_grid(self) -> tuple:
        return self.bottleneck_shape[1:]


def desk_config(**overrides) -> HandNetConfig:
    """Desk-scale defaults: 96x96 input, filter counts an eighth of full scale."""
    kwargs = dict(input_size=(96, 96), scale_divisor=8)
    kwargs.update(overrides)
    return HandNetConfig(**kwargs)


class HandNet:
    """f = h(g(.)): feature extractor g plus box estimator h."""

    def __init__(self, config: HandNetConfig, seed: int):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(np.random.PCG64(seed))
        k, bk = config.kernel, config.backbone_kernel

        self.backbone = []
        cin = 3
        for i, f in enumerate(config.effective_backbone_filters):
            self.backbone.append(Conv2d(f"handnet.bb.conv{i}", cin, f, bk, 2, bk // 2, rng))
            cin = f

        self.encoder = []
        enc = config.effective_encoder_filters
        for i, f in enumerate(enc):
            stride = config.bottleneck_stride if i == len(enc) - 1 else 1
            self.encoder.append(Conv2d(f"handnet.enc.conv{i}", cin, f, k, stride, k // 2, rng))
            cin = f

        # The first deconv undoes the bottleneck stride; a 4x4 kernel is the
        # smallest that lands exactly on 2x the spatial size.
        self.decoder = []
        dec = config.effective_decoder_filters
        for i, f in enumerate(dec):
            if i == 0:
                self.decoder.append(TransposedConv2d(f"handnet.dec.deconv{i}", cin, f, 4, 2, 1, rng))
            else:
                self.decoder.append(TransposedConv2d(f"handnet.dec.deconv{i}", cin, f, k, 1, k // 2, rng))
            cin = f

        a = len(config.anchor_aspects)
        hk = config.head_kernel
        self.cls_head = Conv2d("handnet.head.cls", cin, a * config.num_classes, hk, 2, hk // 2, rng)
        self.box_head = Conv2d("handnet.head.box", cin, a * 4, hk, 2, hk // 2, rng)

        self._params = []
        for layer in [*self.backbone, *self.encoder, *self.decoder, self.cls_head, self.box_head]:
            self._params.extend(layer.params)
        names = [p.name for p in self._params]
        assert len(names) == len(set(names))
        _calibrate_stack([*self.backbone, *self.encoder, *self.decoder],
                         (3, *config.input_size), seed)

    # -- tensor-level passes (accept (3,H,W) or (N,3,H,W)) --------------------

    def features(self, x: core.Tensor) -> core.Tensor:
        for layer in self.backbone:
            x = ops.relu(layer(x))
        for layer in self.encoder:
            x = ops.relu(layer(x))
        return x

    def head_outputs(self, f: core.Tensor) -> tuple:
        """Raw anchor head outputs: per-sample (M, C) logits and (M, 4) offsets."""
        x = f
        for layer in self.decoder:
            x = ops.relu(layer(x))
        cls_out = self.cls_head(x)
        box_out = self.box_head(x)
        a, c = len(self.config.anchor_aspects), self.config.num_classes
        return (self._to_anchor_major(cls_out, a, c), self._to_anchor_major(box_out, a, 4))

    @staticmethod
    def _to_anchor_major(t: core.Tensor, a: int, width: int) -> core.Tensor:
        # (N?, A*width, Hc, Wc) -> (N * Hc*Wc*A, width), cell-major then aspect
        batched = t.data.ndim == 4
        n = t.data.shape[0] if batched else 1
        hc, wc = t.data.shape[-2], t.data.shape[-1]
        t = ops.reshape(t, (n, a, width, hc, wc))
        t = ops.transpose(t, (0, 3, 4, 1, 2))
        return ops.reshape(t, (n * hc * wc * a, width))

    def parameters(self) -> list:
        return list(self._params)

    def feature_parameters(self) -> list:
        out = []
        for layer in [*self.backbone, *self.encoder]:
            out.extend(layer.params)
        return out

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


def _calibrate_stack(layers, input_shape: tuple, seed: int, batch: int = 8) -> None:
    """Rescale each kernel so a seeded noise probe keeps unit activation scale.

    Plain deep stacks attenuate He-uniform activations enough to stall desk
    training; one deterministic per-layer rescale fixes the propagation.
    """
    rng = np.random.default_rng(np.random.PCG64(splitmix_probe(seed)))
    data = rng.standard_normal((batch, *input_shape)).astype(layers[0].kernel.data.dtype)
    for layer in layers:
        out = ops.relu(layer(core.Tensor(data)))
        scale = max(float(out.data.std()), 1e-3)
        layer.kernel.data *= 1.0 / scale
        data = out.data / scale


def splitmix_probe(seed: int) -> int:
    return (seed ^ 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF


def build_hand_net(config: HandNetConfig, seed: int) -> HandNet:
    """Construct a hand network with seeded deterministic initialization."""
    return HandNet(config, seed)


# ----------------------------------------------------------------------------
# Inference surfaces


def encode(net: HandNet, frame: FrameImage) -> FeatureMap:
    """g: frame -> bottleneck feature map."""
    h, w = net.config.input_size
    if frame.pixels.shape != (3, h, w):
        raise ValueError(f"frame shape {frame.pixels.shape} != (3, {h}, {w})")
    x = core.Tensor(frame.pixels.astype(net.param_dtype(), copy=False))
    f = net.features(x)
    return FeatureMap(values=f.data, source_frame=frame.frame_index)


def detect_from_features(net: HandNet, features: FeatureMap,
                         conf_threshold: float = 0.5, nms_threshold: float = 0.45) -> DetectionSet:
    """h: bottleneck feature map -> detections. Pure in the feature map."""
    expected = net.config.bottleneck_shape
    if features.values.shape != expected:
        raise ValueError(f"feature shape {features.values.shape} != bottleneck shape {expected}")
    f = core.Tensor(features.values.astype(net.param_dtype(), copy=False))
    cls_out, box_out = net.head_outputs(f)
    anchors = generate_anchors(net.config)
    boxes = _decode_detections(net.config, cls_out.data, box_out.data, anchors,
                               conf_threshold, nms_threshold)
    return DetectionSet(boxes=boxes, frame_index=features.source_frame)


def detect(net: HandNet, frame: FrameImage,
           conf_threshold: float = 0.5, nms_threshold: float = 0.45) -> DetectionSet:
    """f = h(g(x)); identical to composing encode and detect_from_features."""
    return detect_from_features(net, encode(net, frame), conf_threshold, nms_threshold)


def encode_batch(net: HandNet, pixels: np.ndarray) -> np.ndarray:
    """g over a (N,3,H,W) stack of frames; returns (N,C,H',W') features."""
    x = core.Tensor(pixels.astype(net.param_dtype(), copy=False))
    return net.features(x).data


def detect_from_features_batch(net: HandNet, features: np.ndarray,
                               conf_threshold: float = 0.5,
                               nms_threshold: float = 0.45) -> list:
    """h over a (N,C,H',W') feature stack; one DetectionSet per row."""
    f = core.Tensor(features.astype(net.param_dtype(), copy=False))
    cls_out, box_out = net.head_outputs(f)
    anchors = generate_anchors(net.config)
    m = len(anchors)
    n = features.shape[0]
    out = []
    for i in range(n):
        boxes = _decode_detections(net.config, cls_out.data[i * m:(i + 1) * m],
                                   box_out.data[i * m:(i + 1) * m], anchors,
                                   conf_threshold, nms_threshold)
        out.append(DetectionSet(boxes=boxes, frame_index=i))
    return out


def _decode_detections(config: HandNetConfig, logits: np.ndarray, offsets: np.ndarray,
                       anchors: "AnchorGrid", conf_threshold: float,
                       nms_threshold: float) -> list:
    logits = logits.astype(np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    decoded = decode_boxes(offsets.astype(np.float64), anchors.boxes)
    out = []
    for ci in range(1, config.num_classes):
        scores = probs[:, ci]
        keep = np.flatnonzero(scores >= conf_threshold)
        if keep.size == 0:
            continue
        cand = decoded[keep]
        cand_scores = scores[keep]
        picked = nms(cand, cand_scores, nms_threshold)
        for idx in picked:
            cx, cy, w, h = cand[idx]
            # prediction may overshoot the frame; discard only degenerate boxes
            if w <= 0 or h <= 0:
                continue
            if cx + w / 2 <= 0 or cx - w / 2 >= 1 or cy + h / 2 <= 0 or cy - h / 2 >= 1:
                continue
            out.append(HandBox(hand_class_from_index(ci), float(cx), float(cy),
                               float(w), float(h), float(cand_scores[idx])))
    return out


# ----------------------------------------------------------------------------
# Anchors, matching, box math


@dataclass(frozen=True)
class AnchorGrid:
    """One anchor per (cell, aspect), centers on a uniform grid over the unit square."""

    boxes: np.ndarray  # (M, 4) [cx, cy, w, h] float64
    grid: tuple
    aspects: tuple

    def __len__(self) -> int:
        return self.boxes.shape[0]


def generate_anchors(config: HandNetConfig) -> AnchorGrid:
    hc, wc = config.head_grid
    aspects = config.anchor_aspects
    base = config.anchor_base_scale
    rows = []
    for i in range(hc):
        for j in range(wc):
            cx = (j + 0.5) / wc
            cy = (i + 0.5) / hc
            for a in aspects:
                rows.append((cx, cy, base * np.sqrt(a), base / np.sqrt(a)))
    return AnchorGrid(boxes=np.asarray(rows, dtype=np.float64), grid=(hc, wc), aspects=tuple(aspects))


def _to_corners(boxes: np.ndarray) -> np.ndarray:
    out = np.empty_like(boxes)
    out[:, 0] = boxes[:, 0] - boxes[:, 2] / 2
    out[:, 1] = boxes[:, 1] - boxes[:, 3] / 2
    out[:, 2] = boxes[:, 0] + boxes[:, 2] / 2
    out[:, 3] = boxes[:, 1] + boxes[:, 3] / 2
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (N,4) and (K,4) center-form boxes."""
    ca, cb = _to_corners(np.asarray(a, dtype=np.float64)), _to_corners(np.asarray(b, dtype=np.float64))
    iw = np.clip(np.minimum(ca[:, None, 2], cb[None, :, 2]) - np.maximum(ca[:, None, 0], cb[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(ca[:, None, 3], cb[None, :, 3]) - np.maximum(ca[:, None, 1], cb[None, :, 1]), 0, None)
    inter = iw * ih
    area_a = (ca[:, 2] - ca[:, 0]) * (ca[:, 3] - ca[:, 1])
    area_b = (cb[:, 2] - cb[:, 0]) * (cb[:, 3] - cb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)


def encode_boxes(gt: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Box -> anchor offsets (dcx/aw, dcy/ah, ln(gw/aw), ln(gh/ah))."""
    gt = np.asarray(gt, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    out = np.empty_like(gt)
    out[:, 0] = (gt[:, 0] - anchors[:, 0]) / anchors[:, 2]
    out[:, 1] = (gt[:, 1] - anchors[:, 1]) / anchors[:, 3]
    out[:, 2] = np.log(gt[:, 2] / anchors[:, 2])
    out[:, 3] = np.log(gt[:, 3] / anchors[:, 3])
    return out


def decode_boxes(offsets: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Inverse of encode_boxes."""
    offsets = np.asarray(offsets, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    out = np.empty_like(offsets)
    out[:, 0] = anchors[:, 0] + offsets[:, 0] * anchors[:, 2]
    out[:, 1] = anchors[:, 1] + offsets[:, 1] * anchors[:, 3]
    out[:, 2] = anchors[:, 2] * np.exp(offsets[:, 2])
    out[:, 3] = anchors[:, 3] * np.exp(offsets[:, 3])
    return out


def nms(boxes: np.ndarray, scores: np.ndarray, threshold: float) -> list:
    """Greedy NMS: keep score-descending boxes whose IoU with kept ones <= threshold."""
    order = np.argsort(-scores, kind="stable")
    kept: list = []
    for idx in order:
        candidate = boxes[idx:idx + 1]
        if all(iou_matrix(candidate, boxes[k:k + 1])[0, 0] <= threshold for k in kept):
            kept.append(int(idx))
    return kept


@dataclass
class MatchAssignment:
    """Per-anchor training targets from one ground-truth frame.

    Positives are anchors with IoU >= 0.5 to some box plus each box's argmax
    anchor. Hard-negative mining (at most 3x positives, ranked by current
    classification loss) happens in the loss, which sees the logits.
    """

    anchor_class: np.ndarray     # (M,) int, 0 = background
    offsets: np.ndarray          # (M, 4) float64, defined where positive
    positive_mask: np.ndarray    # (M,) bool
    neg_limit: int

    @property
    def num_positives(self) -> int:
        return int(self.positive_mask.sum())


def match_anchors(anchors: AnchorGrid, truth: DetectionSet,
                  iou_threshold: float = 0.5, neg_ratio: int = 3) -> MatchAssignment:
    m = len(anchors)
    anchor_class = np.zeros(m, dtype=np.int64)
    offsets = np.zeros((m, 4), dtype=np.float64)
    positive = np.zeros(m, dtype=bool)

    if truth.boxes:
        gt = np.asarray([[b.cx, b.cy, b.w, b.h] for b in truth.boxes], dtype=np.float64)
        gt_cls = np.asarray([b.cls.index for b in truth.boxes], dtype=np.int64)
        ious = iou_matrix(anchors.boxes, gt)

        best_gt = ious.argmax(axis=1)
        best_iou = ious[np.arange(m), best_gt]
        positive = best_iou >= iou_threshold
        assigned = best_gt.copy()
        # every ground-truth box claims its own best anchor
        for gi in range(gt.shape[0]):
            ai = int(ious[:, gi].argmax())
            positive[ai] = True
            assigned[ai] = gi

        idx = np.flatnonzero(positive)
        anchor_class[idx] = gt_cls[assigned[idx]]
        offsets[idx] = encode_boxes(gt[assigned[idx]], anchors.boxes[idx])

    return MatchAssignment(anchor_class=anchor_class, offsets=offsets,
                           positive_mask=positive, neg_limit=neg_ratio * int(positive.sum()))


def _mining_weights(logits: np.ndarray, assignment: MatchAssignment) -> np.ndarray:
    """Class weights: positives plus the hardest negatives (<= neg_limit)."""
    weights = assignment.positive_mask.astype(logits.dtype)
    if assignment.neg_limit > 0:
        ld = logits.astype(np.float64)
        shifted = ld - ld.max(axis=1, keepdims=True)
        bg_nll = np.log(np.exp(shifted).sum(axis=1)) - shifted[:, 0]
        bg_nll[assignment.positive_mask] = -np.inf
        order = np.argsort(-bg_nll, kind="stable")
        weights[order[:assignment.neg_limit]] = 1.0
    return weights


def detector_loss(raw_head_outputs: tuple, assignment: MatchAssignment,
                  alpha: float = 1.0) -> core.Tensor:
    """SSD-style composite loss for one frame: class CE + alpha * offset smooth-L1."""
    cls_out, box_out = raw_head_outputs
    weights = _mining_weights(cls_out.data, assignment)
    ce = ops.softmax_cross_entropy(cls_out, assignment.anchor_class, weights)
    mask = np.repeat(assignment.positive_mask[:, None], 4, axis=1).astype(cls_out.data.dtype)
    target = core.Tensor(assignment.offsets.astype(cls_out.data.dtype))
    sl1 = ops.smooth_l1_loss(box_out, target, mask)
    return ops.add(ce, ops.scale(sl1, alpha))


def batched_detector_loss(raw_head_outputs: tuple, assignments: Sequence[MatchAssignment],
                          alpha: float = 1.0) -> core.Tensor:
    """Same composite loss over a batch; head outputs are stacked per-sample blocks."""
    cls_out, box_out = raw_head_outputs
    n = len(assignments)
    m = cls_out.data.shape[0] // n
    labels = np.concatenate([a.anchor_class for a in assignments])
    weights = np.concatenate([
        _mining_weights(cls_out.data[i * m:(i + 1) * m], a) for i, a in enumerate(assignments)
    ])
    pos = np.concatenate([a.positive_mask for a in assignments])
    offsets = np.concatenate([a.offsets for a in assignments])
    ce = ops.softmax_cross_entropy(cls_out, labels, weights)
    mask = np.repeat(pos[:, None], 4, axis=1).astype(cls_out.data.dtype)
    target = core.Tensor(offsets.astype(cls_out.data.dtype))
    sl1 = ops.smooth_l1_loss(box_out, target, mask)
    return ops.add(ce, ops.scale(sl1, alpha))
