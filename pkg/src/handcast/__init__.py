"""handcast: future hand-location regression and arm control on a synthetic
egocentric world.

Three trained parts: a hand detection network whose encoder bottleneck doubles
as a compact scene representation, a fully convolutional regressor that
predicts that representation one horizon ahead, and a dense manipulation
network mapping hand targets to arm joint states. A deterministic synthetic
world supplies all training data, ground truth, and the simulated arm.
"""

from . import core
from .types import (
    DetectionSet,
    FeatureMap,
    FrameImage,
    HAND_CLASSES,
    HandBox,
    HandClass,
    HandPoint,
    JointState,
)

__version__ = "0.1.0"

__all__ = [
    "core",
    "DetectionSet",
    "FeatureMap",
    "FrameImage",
    "HAND_CLASSES",
    "HandBox",
    "HandClass",
    "HandPoint",
    "JointState",
    "__version__",
]
