"""Evaluation protocols: box IoU precision/recall/F-measure, mean pixel
distance, method comparison tables, overlay rendering, and the closed-loop
arm-tracking evaluation.

A prediction counts as a true positive only when its IoU with an unmatched
same-class truth box is strictly greater than the threshold. Matching is
greedy in descending score order. Pixel distances are measured between box
centers at the reference resolution, only on frames where both a prediction
and a truth box of the class exist.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detector import HandNet, detect_from_features_batch, encode_batch, iou_matrix
from .manip import ManipNet, detections_to_hand_point, predict_joints
from .regressor import Regressor
from .synthworld import (
    CameraModel,
    EntityTrack,
    Episode,
    SimArm,
    arm_fk,
    ik_oracle,
    make_script,
    project_to_image,
    render_frame,
    splitmix64,
    CLASS_COLORS,
    _OBJECT_COLORS,
    _OBJECT_SHAPES,
)
from .training import FeatureCache, HandsOnlyNet, detection_log_rows, hands_only_predict
from .types import (
    DetectionSet,
    FrameImage,
    HAND_CLASSES,
    HandBox,
    HandClass,
    HandPoint,
    JointState,
)

__all__ = [
    "iou",
    "evaluate_detections",
    "DetectionMetrics",
    "mean_pixel_distance",
    "PredictionReport",
    "evaluate_method",
    "format_prediction_table",
    "format_distance_table",
    "predict_episode",
    "ClosedLoopResult",
    "ClosedLoopReport",
    "DemoScenario",
    "make_demo_scenario",
    "closed_loop_episode",
    "run_closed_loop",
    "write_ppm",
    "draw_boxes",
    "render_triptych",
]

REFERENCE_RESOLUTION = (1280, 720)

OVERLAY_COLORS = {
    HandClass.MY_LEFT: (1.0, 0.0, 0.0),   # red
    HandClass.MY_RIGHT: (0.0, 0.0, 1.0),  # blue
    HandClass.YOUR_LEFT: (0.0, 1.0, 0.0),  # green
    HandClass.YOUR_RIGHT: (0.0, 1.0, 1.0),  # cyan
}


def iou(a: HandBox, b: HandBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    return float(iou_matrix(np.array([[a.cx, a.cy, a.w, a.h]]),
                            np.array([[b.cx, b.cy, b.w, b.h]]))[0, 0])


# ----------------------------------------------------------------------------
# Protocol 1: IoU precision / recall / F-measure


def _greedy_match(preds: Sequence[HandBox], truth: Sequence[HandBox],
                  threshold: float) -> int:
    """True-positive count: score-descending greedy matching, strict IoU > threshold."""
    order = sorted(range(len(preds)),
                   key=lambda i: -(preds[i].score if preds[i].score is not None else 1.0))
    matched: set = set()
    tp = 0
    for i in order:
        best_iou, best_j = threshold, None
        for j, tbox in enumerate(truth):
            if j in matched:
                continue
            v = iou(preds[i], tbox)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j is not None:
            matched.add(best_j)
            tp += 1
    return tp


def _prf(tp: int, fp: int, fn: int) -> tuple:
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class DetectionMetrics:
    """Frame-level precision/recall/F samples plus per-class micro totals."""

    per_frame: List[tuple]                      # (P, R, F) pooled over classes
    per_class_frames: Dict[HandClass, List[tuple]]
    class_totals: Dict[HandClass, tuple]        # (tp, fp, fn)

    def summary(self) -> dict:
        out = {}
        arr = np.asarray(self.per_frame) if self.per_frame else np.zeros((0, 3))
        for i, name in enumerate(("precision", "recall", "f_measure")):
            out[f"{name}_mean"] = float(arr[:, i].mean()) if len(arr) else 0.0
            out[f"{name}_std"] = float(arr[:, i].std()) if len(arr) else 0.0
        out["frames"] = len(arr)
        return out


def evaluate_detections(preds: Sequence[DetectionSet], truth: Sequence[DetectionSet],
                        threshold: float = 0.5) -> DetectionMetrics:
    """Frame-aligned detection scoring. Frames with neither side are skipped."""
    if len(preds) != len(truth):
        raise ValueError(f"prediction list length {len(preds)} != truth length {len(truth)}")
    per_frame = []
    per_class_frames: Dict[HandClass, List[tuple]] = {c: [] for c in HAND_CLASSES}
    totals = {c: [0, 0, 0] for c in HAND_CLASSES}
    for pset, tset in zip(preds, truth):
        frame_tp = frame_fp = frame_fn = 0
        for cls in HAND_CLASSES:
            p = pset.of_class(cls)
            t = tset.of_class(cls)
            if not p and not t:
                continue
            tp = _greedy_match(p, t, threshold)
            fp, fn = len(p) - tp, len(t) - tp
            totals[cls][0] += tp
            totals[cls][1] += fp
            totals[cls][2] += fn
            frame_tp += tp
            frame_fp += fp
            frame_fn += fn
            per_class_frames[cls].append(_prf(tp, fp, fn))
        if frame_tp + frame_fp + frame_fn > 0:
            per_frame.append(_prf(frame_tp, frame_fp, frame_fn))
    return DetectionMetrics(per_frame=per_frame, per_class_frames=per_class_frames,
                            class_totals={c: tuple(v) for c, v in totals.items()})


# ----------------------------------------------------------------------------
# Protocol 2: mean pixel distance


def mean_pixel_distance(preds: Sequence[DetectionSet], truth: Sequence[DetectionSet],
                        classes: Optional[Sequence[HandClass]] = None,
                        resolution: tuple = REFERENCE_RESOLUTION) -> tuple:
    """Mean and std of center distances where both sides are present.

    Returns (mean, std, count); (nan, nan, 0) when no frame qualifies.
    """
    if len(preds) != len(truth):
        raise ValueError("prediction and truth lists must align")
    classes = tuple(classes) if classes is not None else HAND_CLASSES
    distances = []
    for pset, tset in zip(preds, truth):
        for cls in classes:
            best = pset.best_of_class(cls)
            truths = tset.of_class(cls)
            if best is None or not truths:
                continue
            pu, pv = best.center_px(resolution)
            d = min(math.hypot(pu - t.center_px(resolution)[0], pv - t.center_px(resolution)[1])
                    for t in truths)
            distances.append(d)
    if not distances:
        return float("nan"), float("nan"), 0
    arr = np.asarray(distances)
    return float(arr.mean()), float(arr.std()), len(arr)


# ----------------------------------------------------------------------------
# Method comparison


@dataclass
class PredictionReport:
    """One row of Table-style metrics per evaluated method."""

    rows: Dict[str, dict] = field(default_factory=dict)

    def add(self, method: str, metrics: DetectionMetrics, mpd_all: tuple, mpd_right: tuple) -> None:
        row = metrics.summary()
        row["mpd_all_mean"], row["mpd_all_std"], row["mpd_all_n"] = mpd_all
        row["mpd_right_mean"], row["mpd_right_std"], row["mpd_right_n"] = mpd_right
        self.rows[method] = row

    def to_json(self) -> str:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        payload = {m: {k: clean(v) for k, v in row.items()} for m, row in self.rows.items()}
        return json.dumps(payload, sort_keys=True, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def predict_episode(net: HandNet, reg: Regressor, episode: Episode,
                    t_start: Optional[int] = None, conf_threshold: float = 0.5,
                    nms_threshold: float = 0.45) -> tuple:
    """Future predictions over one episode.

    Returns aligned (predictions, truth) lists, one entry per evaluated target
    frame t+delta for t in [t_start, L-1-delta]. Frames are encoded once and
    the regression runs as one batch.
    """
    k, delta = reg.config.k, reg.config.delta
    t0 = max(k - 1, t_start if t_start is not None else 0)
    t_last = len(episode) - 1 - delta
    if t_last < t0:
        return [], []
    pixels = np.stack([f.pixels for f in episode.frames])
    feats = np.concatenate([encode_batch(net, pixels[i:i + 32]) for i in range(0, len(episode), 32)])
    windows = np.stack([
        np.concatenate([feats[t - i] for i in range(k)], axis=0) for t in range(t0, t_last + 1)
    ])
    out = reg.forward(_tensor_like(reg, windows)).data
    preds = detect_from_features_batch(net, out, conf_threshold, nms_threshold)
    truth = []
    for row, t in enumerate(range(t0, t_last + 1)):
        preds[row].frame_index = t + delta
        truth.append(episode.truth[t + delta])
    return preds, truth


def _tensor_like(model, arr: np.ndarray):
    from . import core

    return core.Tensor(arr.astype(model.param_dtype(), copy=False))


def evaluate_method(method: str, episodes: Sequence[Episode], net: HandNet,
                    reg: Optional[Regressor] = None,
                    hands_only: Optional[HandsOnlyNet] = None,
                    future_net: Optional[HandNet] = None,
                    delta: Optional[int] = None,
                    t_start: Optional[int] = None,
                    conf_threshold: float = 0.5) -> tuple:
    """Aligned (preds, truth) over a test split for one method.

    Methods: "full" (needs reg), "hands_only" (needs hands_only and delta),
    "future_detector" (needs future_net and delta).
    """
    all_preds: List[DetectionSet] = []
    all_truth: List[DetectionSet] = []
    for ep in episodes:
        if method == "full":
            if reg is None:
                raise ValueError("full method needs a trained regressor checkpoint")
            preds, truth = predict_episode(net, reg, ep, t_start, conf_threshold)
        elif method in ("hands_only", "future_detector"):
            if delta is None:
                raise ValueError(f"{method} needs delta")
            t0 = t_start if t_start is not None else 0
            t_last = len(ep) - 1 - delta
            if t_last < t0:
                continue
            pixels = np.stack([ep.frames[t].pixels for t in range(t0, t_last + 1)])
            if method == "hands_only":
                if hands_only is None:
                    raise ValueError("hands_only method needs its trained checkpoint")
                feats = np.concatenate([encode_batch(net, pixels[i:i + 32])
                                        for i in range(0, pixels.shape[0], 32)])
                current = detect_from_features_batch(net, feats, conf_threshold)
                preds = [hands_only_predict(hands_only, c) for c in current]
            else:
                if future_net is None:
                    raise ValueError("future_detector method needs its trained checkpoint")
                feats = np.concatenate([encode_batch(future_net, pixels[i:i + 32])
                                        for i in range(0, pixels.shape[0], 32)])
                preds = detect_from_features_batch(future_net, feats, conf_threshold)
            truth = [ep.truth[t + delta] for t in range(t0, t_last + 1)]
            for row, t in enumerate(range(t0, t_last + 1)):
                preds[row].frame_index = t + delta
        else:
            raise ValueError(f"unknown method {method!r}")
        all_preds.extend(preds)
        all_truth.extend(truth)
    return all_preds, all_truth


def build_report(named_predictions: Dict[str, tuple], threshold: float = 0.5) -> PredictionReport:
    """Score every method's (preds, truth) pair into one report."""
    report = PredictionReport()
    for method, (preds, truth) in named_predictions.items():
        metrics = evaluate_detections(preds, truth, threshold)
        mpd_all = mean_pixel_distance(preds, truth)
        mpd_right = mean_pixel_distance(preds, truth, classes=[HandClass.MY_RIGHT])
        report.add(method, metrics, mpd_all, mpd_right)
    return report


def _fmt(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean:.3f} ± {std:.3f}"


def format_prediction_table(report: PredictionReport) -> str:
    """Aligned text table: method, precision, recall, F-measure."""
    headers = ["Method", "Precision", "Recall", "F-measure"]
    rows = [[m, _fmt(r["precision_mean"], r["precision_std"]),
             _fmt(r["recall_mean"], r["recall_std"]),
             _fmt(r["f_measure_mean"], r["f_measure_std"])]
            for m, r in report.rows.items()]
    return _align([headers] + rows)


def format_distance_table(report: PredictionReport, right_only: bool = False) -> str:
    key = "mpd_right" if right_only else "mpd_all"
    title = "Mean Pixel Distance" + (" (right hand)" if right_only else "")
    headers = ["Method", title]
    rows = [[m, _fmt(r[f"{key}_mean"], r[f"{key}_std"])] for m, r in report.rows.items()]
    return _align([headers] + rows)


def _align(rows: List[List[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# Overlay rendering (P6 PPM)


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write a (3,H,W) [0,1] image as binary P6 PPM."""
    h, w = pixels.shape[1], pixels.shape[2]
    data = (np.clip(pixels, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def draw_boxes(pixels: np.ndarray, boxes: Sequence[HandBox], thickness: int = 1) -> np.ndarray:
    """Outline boxes in the class legend colors; returns a copy."""
    out = pixels.copy()
    h, w = out.shape[1], out.shape[2]
    for box in boxes:
        color = OVERLAY_COLORS[box.cls]
        x0 = int(np.clip(math.floor((box.cx - box.w / 2) * w), 0, w - 1))
        x1 = int(np.clip(math.floor((box.cx + box.w / 2) * w), 0, w - 1))
        y0 = int(np.clip(math.floor((box.cy - box.h / 2) * h), 0, h - 1))
        y1 = int(np.clip(math.floor((box.cy + box.h / 2) * h), 0, h - 1))
        for c in range(3):
            out[c, y0:y0 + thickness, x0:x1 + 1] = color[c]
            out[c, max(0, y1 - thickness + 1):y1 + 1, x0:x1 + 1] = color[c]
            out[c, y0:y1 + 1, x0:x0 + thickness] = color[c]
            out[c, y0:y1 + 1, max(0, x1 - thickness + 1):x1 + 1] = color[c]
    return out


def render_triptych(frame: FrameImage, predictions: Sequence[HandBox],
                    future_frame: FrameImage) -> np.ndarray:
    """Three stacked panels: input, prediction overlay, overlay on true future."""
    panels = [
        frame.pixels,
        draw_boxes(frame.pixels, predictions),
        draw_boxes(future_frame.pixels, predictions),
    ]
    sep = np.ones((3, 2, frame.pixels.shape[2]), dtype=frame.pixels.dtype)
    stacked = [panels[0], sep, panels[1], sep, panels[2]]
    return np.concatenate(stacked, axis=1)


# ----------------------------------------------------------------------------
# Closed-loop execution


@dataclass
class DemoScenario:
    """A reachable goal trajectory for the arm hand plus scene context."""

    seed: int
    duration: int
    fps: int
    start_uv: tuple          # normalized
    velocity_uv: tuple       # normalized per frame
    context_tracks: List[EntityTrack]
    joints_init: JointState
    guided_joints: List[JointState]  # scripted arm states for the first K frames
    hand_size: tuple = (0.19, 0.19)
    # pushed object rendered under the arm hand, as in the carry/push scripts
    carried: tuple = ("square", (0.50, 0.32, 0.12), 0.13, -0.08)

    def goal_uv(self, t: int) -> tuple:
        return (self.start_uv[0] + self.velocity_uv[0] * t,
                self.start_uv[1] + self.velocity_uv[1] * t)


@dataclass
class ClosedLoopResult:
    success: bool
    mean_error_px: float
    steps: int
    trace: List[dict] = field(default_factory=list)


@dataclass
class ClosedLoopReport:
    entries: List[ClosedLoopResult] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        if not self.entries:
            return 0.0
        return sum(e.success for e in self.entries) / len(self.entries)

    def to_json(self) -> str:
        payload = {
            "success_rate": self.success_rate,
            "episodes": [
                {"success": e.success, "mean_error_px": round(e.mean_error_px, 3),
                 "steps": e.steps, "trace": e.trace}
                for e in self.entries
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=1)


# Demo goal paths stay inside the region the steering posture family covers,
# so both the manipulation net and the IK oracle can track them.
_DEMO_REGION = (0.3, 0.7, 0.28, 0.64)  # u0, u1, v0, v1 normalized


def make_demo_scenario(arm: SimArm, cam: CameraModel, seed: int, k: int,
                       horizon: int = 10, duration: Optional[int] = None,
                       fps: int = 10) -> DemoScenario:
    """Sample a goal path whose every control point is arm-reachable.

    The path mimics the training scripts: the actor hand moves at constant
    speed toward a goal object rendered at the path end. The arm starts on
    the path in a natural steering posture.
    """
    from .synthworld import steer_to_point

    rng = np.random.default_rng(np.random.PCG64(seed))
    rw, rh = cam.resolution
    u0, u1, v0, v1 = _DEMO_REGION

    def in_region(p):
        return u0 <= p[0] <= u1 and v0 <= p[1] <= v1

    for attempt in range(200):
        start = (float(rng.uniform(u0, u1)), float(rng.uniform(v0, v1)))
        angle = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.30, 0.45)
        end = (start[0] + length * np.cos(angle), start[1] + length * np.sin(angle))
        if not in_region(end):
            continue
        speed = rng.uniform(0.0090, 0.0115)
        dur = duration if duration is not None else max(int(round(length / speed)), k + horizon)
        velocity = ((end[0] - start[0]) / dur, (end[1] - start[1]) / dur)

        # guided start: steering postures along the path's first K frames
        guided = []
        ok = True
        for t in range(k):
            uv = (start[0] + velocity[0] * t, start[1] + velocity[1] * t)
            target = HandPoint(uv[0] * rw, uv[1] * rh)
            joints = steer_to_point(arm, cam, target)
            err = project_to_image(arm_fk(arm, joints), cam).distance(target)
            if err > 2.0:
                ok = False
                break
            guided.append(joints)
        if not ok:
            continue

        # marker just past the stop point, as in the training scripts
        direction = (np.array(end) - np.array(start)) / length
        marker = np.array(end) + 0.11 * direction
        obj_idx = int(rng.integers(0, 3))
        context = [
            EntityTrack(None, _OBJECT_SHAPES[obj_idx], _OBJECT_COLORS[obj_idx],
                        (0.12, 0.12), ((0, float(marker[0]), float(marker[1])),))
        ]
        return DemoScenario(seed=seed, duration=dur, fps=fps, start_uv=start,
                            velocity_uv=velocity, context_tracks=context,
                            joints_init=guided[0], guided_joints=guided)
    raise RuntimeError("could not sample a reachable demo scenario")


def _render_demo_frame(scenario: DemoScenario, t: int, arm_uv: tuple,
                       frame_size: tuple) -> FrameImage:
    # draw order mirrors the activity scripts: objects, the pushed object,
    # the actor hand, then partner hands
    items = []
    for tr in scenario.context_tracks:
        if tr.hand_cls is None:
            x, y = tr.position(t)
            items.append((tr.shape, tr.color, x, y, tr.size[0], tr.size[1]))
    shape, color, size, dy = scenario.carried
    items.append((shape, color, arm_uv[0], arm_uv[1] + dy, size, size))
    w, h = scenario.hand_size
    items.append(("rect", CLASS_COLORS[HandClass.MY_RIGHT], arm_uv[0], arm_uv[1], w, h))
    for tr in scenario.context_tracks:
        if tr.hand_cls is not None:
            x, y = tr.position(t)
            items.append((tr.shape, tr.color, x, y, tr.size[0], tr.size[1]))
    pixels = render_frame(items, frame_size, splitmix64(scenario.seed, t))
    return FrameImage(pixels=pixels, frame_index=t, episode_id=f"demo_{scenario.seed}")


def closed_loop_episode(net: HandNet, reg: Regressor, manip: Optional[ManipNet],
                        scenario: DemoScenario, arm: SimArm, cam: CameraModel,
                        oracle: bool = False, eps_frac: float = 0.05,
                        max_steps: int = 200, frame_size: tuple = (96, 96),
                        conf_threshold: float = 0.2,
                        control_interval: int = 2) -> ClosedLoopResult:
    """Run one render-predict-act episode against the scripted goal.

    A receding-horizon loop: every ``control_interval`` frames the pipeline
    predicts the hand location one horizon ahead and converts it to a future
    joint state (manipulation net, or ground truth + IK in oracle mode); the
    arm advances toward that state at the pace that would reach it at the
    prediction's time. Success is a mean goal-tracking error within
    ``eps_frac`` of the frame diagonal.

    The control loop accepts lower-confidence predictions than the detection
    default (a stale fallback hurts tracking more than a soft estimate) and
    clamps the target into the visible frame.
    """
    from .regressor import FeatureWindow, regress_future, stack_window
    from .detector import detect_from_features, encode

    k, delta = reg.config.k, reg.config.delta
    rw, rh = cam.resolution
    diagonal = math.hypot(rw, rh)
    joints = scenario.guided_joints[-1]
    feature_maps = []
    # guided start: the arm rides the scripted path while the window fills
    for t in range(k):
        guided = scenario.guided_joints[min(t, len(scenario.guided_joints) - 1)]
        uv_px = project_to_image(arm_fk(arm, guided), cam)
        frame = _render_demo_frame(scenario, t, (uv_px.u / rw, uv_px.v / rh), frame_size)
        feature_maps.append(encode(net, frame))
        joints = guided

    errors: List[float] = []
    trace: List[dict] = []
    steps = 0
    last_point = project_to_image(arm_fk(arm, joints), cam)
    target_joints = joints
    frames_to_target = delta
    for t in range(k, scenario.duration):
        if (t - k) % control_interval == 0 and t - 1 + delta <= scenario.duration - 1 and steps < max_steps:
            current_point = project_to_image(arm_fk(arm, joints), cam)
            if oracle:
                gx, gy = scenario.goal_uv(t - 1 + delta)
                predicted = HandPoint(gx * rw, gy * rh)
                target_joints = ik_oracle(arm, cam, predicted, joints).joints
            else:
                window = FeatureWindow(maps=feature_maps[-k:])
                future = regress_future(reg, stack_window(window))
                dets = detect_from_features(net, future, conf_threshold=conf_threshold)
                predicted = detections_to_hand_point(dets, HandClass.MY_RIGHT, last_point,
                                                     resolution=cam.resolution)
                predicted = HandPoint(min(max(predicted.u, 0.0), float(rw)),
                                      min(max(predicted.v, 0.0), float(rh)))
                if manip is None:
                    raise ValueError("trained mode needs a manipulation network")
                target_joints = predict_joints(manip, joints, current_point, predicted)
            last_point = predicted
            frames_to_target = delta
            steps += 1
            trace.append({
                "t": t - 1, "predicted_uv": [round(predicted.u, 2), round(predicted.v, 2)],
                "joints": [round(float(a), 4) for a in target_joints.angles],
            })
        # advance one frame toward the target state
        frac = 1.0 / max(frames_to_target, 1)
        joints = JointState(arm.clamp(joints.angles + frac * (target_joints.angles - joints.angles)))
        frames_to_target -= 1
        uv_px = project_to_image(arm_fk(arm, joints), cam)
        frame = _render_demo_frame(scenario, t, (uv_px.u / rw, uv_px.v / rh), frame_size)
        feature_maps.append(encode(net, frame))
        gx, gy = scenario.goal_uv(t)
        err = math.hypot(uv_px.u - gx * rw, uv_px.v - gy * rh)
        errors.append(err)
        if trace:
            trace[-1]["error_px"] = round(err, 2)
        if err > diagonal:
            return ClosedLoopResult(success=False, mean_error_px=float(np.mean(errors)),
                                    steps=steps, trace=trace)
    mean_err = float(np.mean(errors)) if errors else float("inf")
    return ClosedLoopResult(success=mean_err <= eps_frac * diagonal,
                            mean_error_px=mean_err, steps=steps, trace=trace)


def run_closed_loop(net: HandNet, reg: Regressor, manip: Optional[ManipNet],
                    arm: SimArm, cam: CameraModel, n_episodes: int, seed: int,
                    oracle: bool = False, eps_frac: float = 0.05) -> ClosedLoopReport:
    report = ClosedLoopReport()
    for i in range(n_episodes):
        scenario = make_demo_scenario(arm, cam, splitmix64(seed, i), reg.config.k)
        report.entries.append(closed_loop_episode(net, reg, manip, scenario, arm, cam,
                                                  oracle=oracle, eps_frac=eps_frac))
    return report
