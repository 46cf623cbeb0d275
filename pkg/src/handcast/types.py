"""Domain value types: frames, feature maps, hand boxes, hand points, joints.

Boxes use normalized [0,1] center/size coordinates; hand points use pixel
coordinates at a reference resolution (1280x720 by default).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class HandClass(Enum):
    MY_LEFT = "my-left"
    MY_RIGHT = "my-right"
    YOUR_LEFT = "your-left"
    YOUR_RIGHT = "your-right"

    @property
    def index(self) -> int:
        """1-based class id; 0 is reserved for background."""
        return _CLASS_ORDER.index(self) + 1


_CLASS_ORDER = [HandClass.MY_LEFT, HandClass.MY_RIGHT, HandClass.YOUR_LEFT, HandClass.YOUR_RIGHT]

HAND_CLASSES = tuple(_CLASS_ORDER)


def hand_class_from_index(idx: int) -> HandClass:
    if not 1 <= idx <= len(_CLASS_ORDER):
        raise ValueError(f"hand class index {idx} out of range [1, {len(_CLASS_ORDER)}]")
    return _CLASS_ORDER[idx - 1]


@dataclass
class FrameImage:
    """Rendered RGB frame: (3, H, W) float array with values in [0, 1]."""

    pixels: np.ndarray
    frame_index: int = 0
    episode_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"frame pixels must be (3,H,W), got {self.pixels.shape}")

    @property
    def size(self) -> tuple:
        return self.pixels.shape[1], self.pixels.shape[2]


@dataclass
class FeatureMap:
    """Encoder-bottleneck representation: (C, H', W') float array."""

    values: np.ndarray
    source_frame: int = 0

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"feature map must be (C,H,W), got {self.values.shape}")


@dataclass
class HandBox:
    """A hand bounding box: normalized center/size plus class and optional score."""

    cls: HandClass
    cx: float
    cy: float
    w: float
    h: float
    score: Optional[float] = None

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box size must be positive, got {self.w}x{self.h}")
        if (self.cx + self.w / 2 <= 0 or self.cx - self.w / 2 >= 1
                or self.cy + self.h / 2 <= 0 or self.cy - self.h / 2 >= 1):
            raise ValueError("box does not intersect the unit square")

    def corners(self) -> tuple:
        """(x0, y0, x1, y1) in normalized coordinates."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def center_px(self, resolution: tuple) -> tuple:
        return self.cx * resolution[0], self.cy * resolution[1]


@dataclass
class DetectionSet:
    """Boxes for one frame; predictions carry scores, ground truth does not."""

    boxes: list = field(default_factory=list)
    frame_index: int = 0

    def of_class(self, cls: HandClass) -> list:
        return [b for b in self.boxes if b.cls is cls]

    def best_of_class(self, cls: HandClass) -> Optional[HandBox]:
        candidates = self.of_class(cls)
        if not candidates:
            return None
        return max(candidates, key=lambda b: b.score if b.score is not None else 1.0)


@dataclass
class HandPoint:
    """Image-plane hand position (u, v) in pixels; may lie outside the frame."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"hand point must be finite, got ({self.u}, {self.v})")

    def distance(self, other: "HandPoint") -> float:
        return math.hypot(self.u - other.u, self.v - other.v)


@dataclass
class JointState:
    """Seven joint angles in radians."""

    angles: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.shape != (7,):
            raise ValueError(f"joint state must have 7 angles, got {self.angles.shape}")
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("joint angles must be finite")


# ----------------------------------------------------------------------------
# Detection dumps: one JSON record per frame.


def detections_to_json(det: DetectionSet, episode_id: str = "") -> str:
    rec = {
        "episode": episode_id,
        "t": det.frame_index,
        "boxes": [
            {"class": b.cls.value, "cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h,
             **({"score": b.score} if b.score is not None else {})}
            for b in det.boxes
        ],
    }
    return json.dumps(rec, sort_keys=True)


def detections_from_json(line: str) -> DetectionSet:
    rec = json.loads(line)
    boxes = [
        HandBox(HandClass(b["class"]), b["cx"], b["cy"], b["w"], b["h"], b.get("score"))
        for b in rec["boxes"]
    ]
    return DetectionSet(boxes=boxes, frame_index=rec["t"])


def write_detections_jsonl(path, sets: Sequence[DetectionSet], episode_id: str = "") -> None:
    lines = [detections_to_json(d, episode_id) for d in sets]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_detections_jsonl(path) -> list:
    text = Path(path).read_text()
    return [detections_from_json(line) for line in text.splitlines() if line.strip()]
