"""Deterministic synthetic stand-in for the three training corpora.

Provides scripted first-person activity episodes (frames plus exact box truth),
a labeled detector frame set, simulated-arm robot logs, and the kinematics and
projection math those logs rest on. Everything is a pure function of its seed;
frames rasterize on the integer pixel grid so regeneration is bit-stable.

Hands render as filled class-colored rectangles, objects as discs, triangles
or squares in other colors, over a flat background with seeded pixel noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core.checkpoint import read_ftr, write_ftr
from .types import (
    DetectionSet,
    FrameImage,
    HandBox,
    HandClass,
    HandPoint,
    JointState,
)

__all__ = [
    "splitmix64",
    "EntityTrack",
    "ActivityScript",
    "Episode",
    "make_script",
    "generate_episode",
    "render_frame",
    "save_episode",
    "load_episode",
    "generate_detector_set",
    "generate_interaction_corpus",
    "SimArm",
    "CameraModel",
    "default_arm",
    "default_camera",
    "arm_fk",
    "project_to_image",
    "BehindCameraError",
    "RobotLogRecord",
    "generate_robot_logs",
    "save_logs",
    "load_logs",
    "IkSolution",
    "ik_oracle",
    "CLASS_COLORS",
    "SCRIPT_KINDS",
]


def splitmix64(seed: int, index: int = 0) -> int:
    """Derive an independent child seed; used to fan out per-episode seeds."""
    z = (seed + 0x9E3779B97F4A7C15 * (index + 1)) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


# world palette: one saturated primary per hand class, chosen for maximal
# pairwise channel separation so compressed features keep classes apart
# (overlay legend colors are a separate concern of the renderer)
CLASS_COLORS = {
    HandClass.MY_LEFT: (0.90, 0.10, 0.10),
    HandClass.MY_RIGHT: (0.10, 0.15, 0.95),
    HandClass.YOUR_LEFT: (0.10, 0.80, 0.15),
    HandClass.YOUR_RIGHT: (0.95, 0.80, 0.10),
}

_OBJECT_COLORS = [(0.55, 0.10, 0.65), (0.92, 0.92, 0.92), (0.50, 0.32, 0.12)]
_OBJECT_SHAPES = ["disc", "triangle", "square"]

_BACKGROUND = 0.35
SCRIPT_KINDS = ("ClearTable", "PushTrivet", "Static", "ConstantVelocity")


@dataclass
class EntityTrack:
    """A scene entity moving piecewise-linearly through timed waypoints."""

    hand_cls: Optional[HandClass]
    shape: str              # "rect" for hands, else object shape
    color: tuple
    size: tuple             # (w, h) normalized
    waypoints: tuple        # ((t, x, y), ...) sorted by t, covering the episode

    def position(self, t: int) -> tuple:
        pts = self.waypoints
        if t <= pts[0][0]:
            return pts[0][1], pts[0][2]
        for (t0, x0, y0), (t1, x1, y1) in zip(pts, pts[1:]):
            if t <= t1:
                a = (t - t0) / max(t1 - t0, 1)
                return x0 + a * (x1 - x0), y0 + a * (y1 - y0)
        return pts[-1][1], pts[-1][2]


def _line(start, goal, duration) -> tuple:
    return ((0, start[0], start[1]), (duration, goal[0], goal[1]))


@dataclass
class ActivityScript:
    kind: str
    duration: int
    fps: int
    seed: int
    noise: float = 0.0      # positional jitter std, normalized units
    tracks: List[EntityTrack] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in SCRIPT_KINDS:
            raise ValueError(f"unknown script kind {self.kind!r}")
        for tr in self.tracks:
            for t, x, y in tr.waypoints:
                if not (-0.2 <= x <= 1.2 and -0.2 <= y <= 1.2):
                    raise ValueError(f"track leaves the [-0.2, 1.2] bounds at frame {t}")

    def summary(self) -> dict:
        return {"kind": self.kind, "duration": self.duration, "fps": self.fps,
                "seed": self.seed, "noise": self.noise}


def _hand_track(rng, cls: HandClass, waypoints) -> EntityTrack:
    w = float(rng.uniform(0.17, 0.26))
    h = float(w * rng.uniform(0.85, 1.15))
    return EntityTrack(cls, "rect", CLASS_COLORS[cls], (w, h), tuple(waypoints))


def _object_track(rng, idx: int, waypoints) -> EntityTrack:
    size = float(rng.uniform(0.10, 0.18))
    if isinstance(waypoints[0], float) or isinstance(waypoints[0], np.floating):
        waypoints = ((0, waypoints[0], waypoints[1]),)
    return EntityTrack(None, _OBJECT_SHAPES[idx % 3], _OBJECT_COLORS[idx % 3],
                       (size, size), tuple(waypoints))


# actor speed band (normalized units per frame at 10 fps); episodes derive
# their duration from path length / speed so displacement over one horizon
# stays in a narrow, learnable range
SPEED_RANGE = (0.0085, 0.0122)

# goal markers sit this far past the hand's stopping point so the hand ends
# next to them rather than occluding them
MARKER_GAP = 0.11


def _sample_path(rng, min_len=0.55, max_len=0.95, lo=0.12, hi=0.88):
    """A start/goal pair inside the frame with a guaranteed path length."""
    for _ in range(200):
        start = rng.uniform(lo, hi, size=2)
        goal = rng.uniform(lo, hi, size=2)
        if min_len <= float(np.hypot(*(goal - start))) <= max_len:
            return tuple(start), tuple(goal)
    raise RuntimeError("could not sample a path; bounds too tight")


def _sample_actor_legs(rng, two_leg_prob=0.5):
    """One- or two-leg actor path plus the marker placed past the final goal.

    Two-leg paths put a direction change in the middle of the episode, so the
    future is only predictable from the scene context, not from velocity
    extrapolation alone.
    """
    two_leg = rng.random() < two_leg_prob
    if two_leg:
        for _ in range(200):
            start = rng.uniform(0.15, 0.85, size=2)
            mid = rng.uniform(0.15, 0.85, size=2)
            goal = rng.uniform(0.15, 0.85, size=2)
            l1 = float(np.hypot(*(mid - start)))
            l2 = float(np.hypot(*(goal - mid)))
            if 0.28 <= l1 <= 0.6 and 0.28 <= l2 <= 0.6:
                break
        else:
            raise RuntimeError("could not sample a two-leg path")
        legs = [tuple(start), tuple(mid), tuple(goal)]
        total = l1 + l2
    else:
        start, goal = _sample_path(rng)
        legs = [tuple(start), tuple(goal)]
        total = float(np.hypot(goal[0] - start[0], goal[1] - start[1]))
    speed = float(rng.uniform(*SPEED_RANGE))
    duration = int(round(total / speed))
    times = [0]
    acc = 0.0
    for a, b in zip(legs, legs[1:]):
        acc += float(np.hypot(b[0] - a[0], b[1] - a[1]))
        times.append(int(round(duration * acc / total)))
    waypoints = tuple((tt, float(p[0]), float(p[1])) for tt, p in zip(times, legs))
    seg = np.array(legs[-1]) - np.array(legs[-2])
    marker = np.array(legs[-1]) + MARKER_GAP * seg / max(float(np.hypot(*seg)), 1e-9)
    return waypoints, tuple(np.clip(marker, -0.15, 1.15)), duration


def make_script(kind: str, seed: int, duration: Optional[int] = None,
                fps: int = 10, noise: float = 0.0) -> ActivityScript:
    """Build a seeded script of the given kind.

    Moving kinds drive the actor hand toward a goal marker at a per-episode
    speed from SPEED_RANGE; half the paths change direction mid-episode. The
    motion is predictable from history plus scene context, never from a single
    frame's hand position alone. When no duration is given it follows from
    path length over speed.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    tracks: List[EntityTrack] = []

    if kind == "Static":
        duration = duration or int(rng.integers(60, 101))
        n_objects = int(rng.integers(1, 3))
        for i in range(n_objects):
            pos = rng.uniform(0.2, 0.8, size=2)
            tracks.append(_object_track(rng, i, ((0, pos[0], pos[1]),)))
        for cls in (HandClass.MY_RIGHT, HandClass.YOUR_LEFT):
            pos = rng.uniform(0.2, 0.8, size=2)
            tracks.append(_hand_track(rng, cls, _line(pos, pos, duration)))
        return ActivityScript(kind=kind, duration=duration, fps=fps, seed=seed,
                              noise=noise, tracks=tracks)

    if kind not in ("ConstantVelocity", "ClearTable", "PushTrivet"):
        raise ValueError(f"unknown script kind {kind!r}")

    actor_wp, marker, path_duration = _sample_actor_legs(rng)
    if duration is None:
        duration = path_duration
    else:
        scale = duration / max(path_duration, 1)
        actor_wp = tuple((int(round(t * scale)), x, y) for t, x, y in actor_wp)
        actor_wp = ((0,) + actor_wp[0][1:],) + actor_wp[1:-1] + ((duration,) + actor_wp[-1][1:],)

    if kind == "ConstantVelocity":
        tracks.append(_object_track(rng, int(rng.integers(0, 3)), marker))
        tracks.append(_hand_track(rng, HandClass.MY_RIGHT, actor_wp))
        if rng.random() < 0.7:
            s2, g2 = _sample_path(rng)
            tracks.append(_hand_track(rng, HandClass.YOUR_RIGHT, _line(s2, g2, duration)))

    elif kind == "ClearTable":
        # my right hand carries an object along its path to the edge marker
        bg = rng.uniform(0.25, 0.75, size=2)
        tracks.append(_object_track(rng, 2, ((0, bg[0], bg[1]),)))
        tracks.append(_object_track(rng, 0, marker))
        tracks.append(EntityTrack(None, _OBJECT_SHAPES[1], _OBJECT_COLORS[1],
                                  (0.12, 0.12), actor_wp))
        tracks.append(_hand_track(rng, HandClass.MY_RIGHT, actor_wp))
        s2, g2 = _sample_path(rng, min_len=0.5)
        tracks.append(_hand_track(rng, HandClass.YOUR_LEFT, _line(s2, g2, duration)))
        s3, g3 = _sample_path(rng, min_len=0.5)
        tracks.append(_hand_track(rng, HandClass.YOUR_RIGHT, _line(s3, g3, duration)))

    elif kind == "PushTrivet":
        # my right hand pushes the trivet toward the approaching partner hand
        tracks.append(_object_track(rng, 0, marker))
        trivet_wp = tuple((t, x, max(-0.05, y - 0.08)) for t, x, y in actor_wp)
        tracks.append(EntityTrack(None, _OBJECT_SHAPES[2], _OBJECT_COLORS[2],
                                  (0.13, 0.13), trivet_wp))
        tracks.append(_hand_track(rng, HandClass.MY_RIGHT, actor_wp))
        s2, g2 = _sample_path(rng, min_len=0.5)
        tracks.append(_hand_track(rng, HandClass.YOUR_RIGHT, _line(s2, g2, duration)))
        if rng.random() < 0.5:
            s3, g3 = _sample_path(rng, min_len=0.4)
            tracks.append(_hand_track(rng, HandClass.MY_LEFT, _line(s3, g3, duration)))

    return ActivityScript(kind=kind, duration=duration, fps=fps, seed=seed,
                          noise=noise, tracks=tracks)


# ----------------------------------------------------------------------------
# Rendering


def _fill_rect(img: np.ndarray, color, cx, cy, w, h) -> None:
    size_h, size_w = img.shape[1], img.shape[2]
    x0 = max(0, int(math.floor((cx - w / 2) * size_w)))
    x1 = min(size_w, int(math.floor((cx + w / 2) * size_w)))
    y0 = max(0, int(math.floor((cy - h / 2) * size_h)))
    y1 = min(size_h, int(math.floor((cy + h / 2) * size_h)))
    if x0 < x1 and y0 < y1:
        for c in range(3):
            img[c, y0:y1, x0:x1] = color[c]


def _fill_disc(img: np.ndarray, color, cx, cy, w, h) -> None:
    size_h, size_w = img.shape[1], img.shape[2]
    yy = (np.arange(size_h) + 0.5) / size_h
    xx = (np.arange(size_w) + 0.5) / size_w
    mask = (((xx[None, :] - cx) / (w / 2)) ** 2 + ((yy[:, None] - cy) / (h / 2)) ** 2) <= 1.0
    for c in range(3):
        img[c][mask] = color[c]


def _fill_triangle(img: np.ndarray, color, cx, cy, w, h) -> None:
    size_h, size_w = img.shape[1], img.shape[2]
    yy = (np.arange(size_h) + 0.5) / size_h
    xx = (np.arange(size_w) + 0.5) / size_w
    # upward triangle inscribed in the box
    inside_y = (yy[:, None] >= cy - h / 2) & (yy[:, None] <= cy + h / 2)
    frac = np.clip((yy[:, None] - (cy - h / 2)) / h, 0, 1)  # 0 at apex
    half = frac * (w / 2)
    mask = inside_y & (np.abs(xx[None, :] - cx) <= half)
    for c in range(3):
        img[c][mask] = color[c]


_FILLERS = {"rect": _fill_rect, "square": _fill_rect, "disc": _fill_disc, "triangle": _fill_triangle}


def render_frame(items: Sequence[tuple], size: tuple, noise_seed: int,
                 noise_std: float = 0.02) -> np.ndarray:
    """Rasterize (shape, color, cx, cy, w, h) items back-to-front over noise.

    Items draw in list order, so later entries occlude earlier ones.
    """
    h, w = size
    rng = np.random.default_rng(np.random.PCG64(noise_seed))
    img = np.full((3, h, w), _BACKGROUND, dtype=np.float32)
    img += rng.normal(0.0, noise_std, size=(3, h, w)).astype(np.float32)
    for shape, color, cx, cy, bw, bh in items:
        _FILLERS[shape](img, color, cx, cy, bw, bh)
    return np.clip(img, 0.0, 1.0)


@dataclass
class Episode:
    episode_id: str
    frames: List[FrameImage]
    truth: List[DetectionSet]
    fps: int
    script: Optional[ActivityScript] = None

    def __post_init__(self):
        if len(self.frames) != len(self.truth):
            raise ValueError("frames and truth must align")

    def __len__(self) -> int:
        return len(self.frames)


def generate_episode(script: ActivityScript, episode_id: str = "",
                     frame_size: tuple = (96, 96)) -> Episode:
    """Render a script: one frame and one exact truth set per time step."""
    jitter_rng = np.random.default_rng(np.random.PCG64(splitmix64(script.seed, 0xA11CE)))
    frames: List[FrameImage] = []
    truth: List[DetectionSet] = []
    for t in range(script.duration):
        items = []
        boxes = []
        for tr in script.tracks:
            x, y = tr.position(t)
            if script.noise > 0:
                x += float(jitter_rng.normal(0, script.noise))
                y += float(jitter_rng.normal(0, script.noise))
            if tr.hand_cls is None:
                items.append((tr.shape, tr.color, x, y, tr.size[0], tr.size[1]))
        for tr in script.tracks:
            x, y = tr.position(t)
            if script.noise > 0:
                x += float(jitter_rng.normal(0, script.noise))
                y += float(jitter_rng.normal(0, script.noise))
            if tr.hand_cls is not None:
                w, h = tr.size
                # drop hands that left the visible square entirely
                if x + w / 2 <= 0 or x - w / 2 >= 1 or y + h / 2 <= 0 or y - h / 2 >= 1:
                    continue
                items.append((tr.shape, tr.color, x, y, w, h))
                boxes.append(HandBox(tr.hand_cls, x, y, w, h))
        pixels = render_frame(items, frame_size, splitmix64(script.seed, t))
        frames.append(FrameImage(pixels=pixels, frame_index=t, episode_id=episode_id))
        truth.append(DetectionSet(boxes=boxes, frame_index=t))
    return Episode(episode_id=episode_id, frames=frames, truth=truth,
                   fps=script.fps, script=script)


_DETECTOR_CLASS_POOL = (HandClass.MY_LEFT, HandClass.MY_RIGHT, HandClass.YOUR_LEFT, HandClass.YOUR_RIGHT)


def generate_detector_set(n_frames: int = 500, seed: int = 0,
                          frame_size: tuple = (96, 96), episode_id: str = "detector") -> Episode:
    """Labeled frames spanning hand scales and positions (detector analog set)."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    frames: List[FrameImage] = []
    truth: List[DetectionSet] = []
    for t in range(n_frames):
        items = []
        boxes = []
        for i in range(int(rng.integers(0, 3))):
            size = float(rng.uniform(0.08, 0.2))
            pos = rng.uniform(0.1, 0.9, size=2)
            idx = int(rng.integers(0, 3))
            items.append((_OBJECT_SHAPES[idx], _OBJECT_COLORS[idx], pos[0], pos[1], size, size))
        n_hands = int(rng.integers(0, 5))
        classes = list(rng.permutation(len(_DETECTOR_CLASS_POOL))[:n_hands])
        placed: list = []
        for ci in classes:
            cls = _DETECTOR_CLASS_POOL[int(ci)]
            w = float(rng.uniform(0.17, 0.28))
            h = float(w * rng.uniform(0.85, 1.15))
            # keep hands apart so none is reduced to an occluded sliver
            for _ in range(40):
                x = float(rng.uniform(0.12, 0.88))
                y = float(rng.uniform(0.12, 0.88))
                if all((x - px) ** 2 + (y - py) ** 2 >= 0.22 ** 2 for px, py in placed):
                    break
            placed.append((x, y))
            items.append(("rect", CLASS_COLORS[cls], x, y, w, h))
            boxes.append(HandBox(cls, x, y, w, h))
        pixels = render_frame(items, frame_size, splitmix64(seed, t))
        frames.append(FrameImage(pixels=pixels, frame_index=t, episode_id=episode_id))
        truth.append(DetectionSet(boxes=boxes, frame_index=t))
    return Episode(episode_id=episode_id, frames=frames, truth=truth, fps=1)


_INTERACTION_KINDS = ("ClearTable", "PushTrivet", "ConstantVelocity")


def generate_interaction_corpus(n_episodes: int = 47, seed: int = 0, fps: int = 10,
                                frame_size: tuple = (96, 96)) -> List[Episode]:
    """Moving-script interaction episodes; per-episode seeds split from the master."""
    episodes = []
    for i in range(n_episodes):
        kind = _INTERACTION_KINDS[i % len(_INTERACTION_KINDS)]
        script = make_script(kind, seed=splitmix64(seed, i), fps=fps)
        episodes.append(generate_episode(script, episode_id=f"ep_{i:03d}", frame_size=frame_size))
    return episodes


# ----------------------------------------------------------------------------
# Episode persistence: manifest.json + frame_%05d.ftr + truth.jsonl


def save_episode(episode: Episode, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "episode_id": episode.episode_id,
        "fps": episode.fps,
        "n_frames": len(episode),
        "script": episode.script.summary() if episode.script else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    for frame in episode.frames:
        write_ftr(directory / f"frame_{frame.frame_index:05d}.ftr", frame.pixels)
    from .types import write_detections_jsonl

    write_detections_jsonl(directory / "truth.jsonl", episode.truth, episode.episode_id)


def load_episode(directory) -> Episode:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    from .types import read_detections_jsonl

    truth = read_detections_jsonl(directory / "truth.jsonl")
    frames = []
    for t in range(manifest["n_frames"]):
        pixels = read_ftr(directory / f"frame_{t:05d}.ftr")
        frames.append(FrameImage(pixels=pixels, frame_index=t, episode_id=manifest["episode_id"]))
    return Episode(episode_id=manifest["episode_id"], frames=frames, truth=truth,
                   fps=manifest["fps"])


# ----------------------------------------------------------------------------
# Simulated arm, camera, and kinematics


@dataclass(frozen=True)
class SimArm:
    """Seven-joint serial chain with alternating yaw/pitch axes."""

    link_lengths: tuple = (0.22, 0.10, 0.24, 0.08, 0.20, 0.08, 0.08)
    joint_limits: tuple = ((-2.4, 2.4), (-2.0, 2.0), (-2.4, 2.4), (-2.0, 2.0),
                           (-2.4, 2.4), (-2.0, 2.0), (-2.4, 2.4))
    base_position: tuple = (0.0, 0.0, 0.0)
    axes: str = "zyzyzyz"

    def __post_init__(self):
        if len(self.link_lengths) != 7 or len(self.joint_limits) != 7 or len(self.axes) != 7:
            raise ValueError("arm must have exactly 7 links, limits, and axes")
        if sum(self.link_lengths) <= 0:
            raise ValueError("total reach must be positive")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise ValueError("joint limits must be non-degenerate")

    def limits_array(self) -> np.ndarray:
        return np.asarray(self.joint_limits, dtype=np.float64)

    def clamp(self, angles: np.ndarray) -> np.ndarray:
        lim = self.limits_array()
        return np.clip(angles, lim[:, 0], lim[:, 1])


def default_arm() -> SimArm:
    return SimArm()


def _axis_rotation(axis: str, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    raise ValueError(f"unknown axis {axis!r}")


def arm_fk(arm: SimArm, joints: JointState, check_limits: bool = True) -> np.ndarray:
    """End-effector position: rotate about each joint axis, advance along local x."""
    angles = joints.angles
    if check_limits:
        lim = arm.limits_array()
        if np.any(angles < lim[:, 0] - 1e-9) or np.any(angles > lim[:, 1] + 1e-9):
            bad = int(np.argmax((angles < lim[:, 0] - 1e-9) | (angles > lim[:, 1] + 1e-9)))
            raise ValueError(f"joint {bad} angle {angles[bad]:.3f} outside limits {arm.joint_limits[bad]}")
    rot = np.eye(3)
    pos = np.asarray(arm.base_position, dtype=np.float64).copy()
    for axis, theta, length in zip(arm.axes, angles, arm.link_lengths):
        rot = rot @ _axis_rotation(axis, float(theta))
        pos = pos + rot @ np.array([length, 0.0, 0.0])
    return pos


class BehindCameraError(ValueError):
    """Raised when projecting a point at or behind the camera plane."""


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics at the reference resolution plus world pose."""

    fx: float = 850.0
    fy: float = 850.0
    cx: float = 640.0
    cy: float = 360.0
    resolution: tuple = (1280, 720)
    position: tuple = (-0.55, 0.0, 0.55)
    look_at: tuple = (0.55, 0.0, 0.0)

    def rotation(self) -> np.ndarray:
        fwd = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position, dtype=np.float64)
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])


def default_camera() -> CameraModel:
    return CameraModel()


def project_to_image(point: np.ndarray, cam: CameraModel) -> HandPoint:
    """Pinhole projection to pixels at the camera's reference resolution."""
    pc = cam.rotation() @ (np.asarray(point, dtype=np.float64) - np.asarray(cam.position))
    if pc[2] <= 1e-9:
        raise BehindCameraError(f"point {point} is not in front of the camera (depth {pc[2]:.4f})")
    return HandPoint(u=float(cam.fx * pc[0] / pc[2] + cam.cx),
                     v=float(cam.fy * pc[1] / pc[2] + cam.cy))


def unproject(point: HandPoint, depth: float, cam: CameraModel) -> np.ndarray:
    """Inverse projection given the camera-frame depth (used by round-trip checks)."""
    x = (point.u - cam.cx) / cam.fx * depth
    y = (point.v - cam.cy) / cam.fy * depth
    return cam.rotation().T @ np.array([x, y, depth]) + np.asarray(cam.position)


# ----------------------------------------------------------------------------
# Robot logs


@dataclass
class RobotLogRecord:
    t: int
    hand: HandPoint
    joints: JointState
    arm_id: str = "right"


def _catmull_rom(waypoints: np.ndarray, n_samples: int) -> np.ndarray:
    """Catmull-Rom spline through waypoints, sampled uniformly; (n_samples, D)."""
    m = waypoints.shape[0] - 1
    padded = np.vstack([waypoints[0], waypoints, waypoints[-1]])
    out = np.empty((n_samples, waypoints.shape[1]))
    for i in range(n_samples):
        u = i / max(1, n_samples - 1) * m
        seg = min(int(u), m - 1)
        s = u - seg
        p0, p1, p2, p3 = padded[seg], padded[seg + 1], padded[seg + 2], padded[seg + 3]
        out[i] = 0.5 * ((2 * p1) + (-p0 + p2) * s
                        + (2 * p0 - 5 * p1 + 4 * p2 - p3) * s * s
                        + (-p0 + 3 * p1 - 3 * p2 + p3) * s ** 3)
    return out


# Guided-arm posture family: the base yaw and shoulder pitch steer the hand
# across the image while the elbow/wrist joints hold a comfortable pose. This
# mimics an operator moving the arm through natural, low-dimensional postures
# and keeps the hand-position-to-joints relation learnable.
STEER_FIXED = np.array([0.25, -0.45, 0.2, -0.35, 0.0])
STEER_YAW_RANGE = (-1.05, 0.55)
STEER_PITCH_RANGE = (-0.15, 0.95)


def steering_joints(yaw: float, pitch: float, posture_noise: Optional[np.ndarray] = None) -> np.ndarray:
    angles = np.concatenate([[yaw, pitch], STEER_FIXED])
    if posture_noise is not None:
        angles = angles + posture_noise
    return angles


def steer_to_point(arm: SimArm, cam: CameraModel, target: HandPoint,
                   init_yaw: float = 0.0, init_pitch: float = 0.4) -> JointState:
    """2-DOF coordinate descent on the steering joints toward a pixel target."""
    lim = arm.limits_array()
    best = np.array([init_yaw, init_pitch])

    def err(steer):
        angles = np.clip(steering_joints(steer[0], steer[1]), lim[:, 0], lim[:, 1])
        return _pixel_error(arm, cam, angles, target)

    e = err(best)
    step = 0.4
    while step >= 1e-5:
        improved = False
        for j in range(2):
            for delta in (step, -step):
                cand = best.copy()
                cand[j] += delta
                ce = err(cand)
                if ce < e - 1e-12:
                    best, e = cand, ce
                    improved = True
        if not improved:
            step *= 0.5
        if e < 1e-3:
            break
    return JointState(np.clip(steering_joints(best[0], best[1]), lim[:, 0], lim[:, 1]))


def generate_robot_logs(arm: SimArm, cam: CameraModel, n_sequences: int = 50,
                        seed: int = 0, n_frames: int = 240,
                        n_waypoints: int = 4, posture_jitter: float = 0.02) -> List[List[RobotLogRecord]]:
    """Smooth seeded joint splines with per-frame FK projection; no activity labels.

    Each sequence splines the two steering joints through seeded waypoints and
    adds a small splined jitter on all seven joints.
    """
    lim = arm.limits_array()
    logs = []
    for s in range(n_sequences):
        rng = np.random.default_rng(np.random.PCG64(splitmix64(seed, s)))
        steer = np.column_stack([
            rng.uniform(*STEER_YAW_RANGE, n_waypoints),
            rng.uniform(*STEER_PITCH_RANGE, n_waypoints),
        ])
        steer_path = _catmull_rom(steer, n_frames)
        jitter_path = _catmull_rom(rng.normal(0, posture_jitter, size=(n_waypoints, 7)), n_frames)
        records = []
        for t in range(n_frames):
            angles = steering_joints(steer_path[t, 0], steer_path[t, 1], jitter_path[t])
            joints = JointState(np.clip(angles, lim[:, 0], lim[:, 1]))
            hand = project_to_image(arm_fk(arm, joints), cam)
            records.append(RobotLogRecord(t=t, hand=hand, joints=joints))
        logs.append(records)
    return logs


def save_logs(logs: Sequence[Sequence[RobotLogRecord]], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, records in enumerate(logs):
        lines = [
            json.dumps({"t": r.t, "arm": r.arm_id, "u": r.hand.u, "v": r.hand.v,
                        "joints": [float(a) for a in r.joints.angles]}, sort_keys=True)
            for r in records
        ]
        (directory / f"logs_{i:03d}.jsonl").write_text("\n".join(lines) + "\n")


def load_logs(directory) -> List[List[RobotLogRecord]]:
    directory = Path(directory)
    logs = []
    for path in sorted(directory.glob("logs_*.jsonl")):
        records = []
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            records.append(RobotLogRecord(t=rec["t"], hand=HandPoint(rec["u"], rec["v"]),
                                          joints=JointState(np.asarray(rec["joints"])),
                                          arm_id=rec["arm"]))
        logs.append(records)
    return logs


# ----------------------------------------------------------------------------
# Brute-force inverse-kinematics oracle


@dataclass
class IkSolution:
    joints: JointState
    pixel_error: float
    reachable: bool


def _pixel_error(arm: SimArm, cam: CameraModel, angles: np.ndarray, target: HandPoint) -> float:
    try:
        p = project_to_image(arm_fk(arm, JointState(angles), check_limits=False), cam)
    except BehindCameraError:
        return float("inf")
    return p.distance(target)


def ik_oracle(arm: SimArm, cam: CameraModel, target: HandPoint,
              joints_init: JointState, tolerance: float = 1.0) -> IkSolution:
    """Coordinate descent with shrinking steps on the projected pixel error.

    Returns joints within ``tolerance`` pixels of the target, or flags the
    target unreachable; never fabricates a solution.
    """
    lim = arm.limits_array()
    best = arm.clamp(joints_init.angles.copy())
    best_err = _pixel_error(arm, cam, best, target)
    step = 0.6
    while step >= 1e-6:
        improved = False
        for j in range(7):
            for delta in (step, -step):
                cand = best.copy()
                cand[j] = np.clip(cand[j] + delta, lim[j, 0], lim[j, 1])
                err = _pixel_error(arm, cam, cand, target)
                if err < best_err - 1e-12:
                    best, best_err = cand, err
                    improved = True
        if not improved:
            step *= 0.5
        if best_err < 1e-4:
            break
    return IkSolution(joints=JointState(best), pixel_error=float(best_err),
                      reachable=bool(best_err <= tolerance))
