"""
Parallel-jaw gripper point clouds.

Gripper frame: x is the closing axis b, y = a × b, z is the approach axis a,
origin at the grasp centre between the fingertips. Fingers are boxes of
finger_width (x) × hand_height (y) × hand_depth (z) centred at z = 0; the palm
sits behind them (negative z). The open cloud has the inner finger faces at
±width/2, the closed cloud has both fingers pressed together at x = 0.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from shared.types import SceneValidationError

CLOUD_POINTS = 1000
PRESET_WIDTHS = (0.06, 0.08)
FINGER_WIDTH = 0.01
HAND_HEIGHT = 0.02
HAND_DEPTH = 0.04
PALM_THICKNESS = 0.01

Box = Tuple[np.ndarray, np.ndarray]  # (lower corner, upper corner)


def finger_boxes(opening: float) -> List[Box]:
    """Finger and palm boxes for a given inner opening (0 when closed)."""
    half_h, half_d = HAND_HEIGHT / 2.0, HAND_DEPTH / 2.0
    inner = opening / 2.0
    outer = inner + FINGER_WIDTH
    left = (np.array([-outer, -half_h, -half_d]), np.array([-inner, half_h, half_d]))
    right = (np.array([inner, -half_h, -half_d]), np.array([outer, half_h, half_d]))
    palm = (np.array([-outer, -half_h, -half_d - PALM_THICKNESS]), np.array([outer, half_h, -half_d]))
    return [left, right, palm]


def sample_box_surfaces(boxes: List[Box], count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the faces of axis-aligned boxes."""
    faces = []
    for lower, upper in boxes:
        size = upper - lower
        for axis in range(3):
            u, v = [a for a in range(3) if a != axis]
            for side in (lower[axis], upper[axis]):
                faces.append((axis, side, u, v, lower, size, size[u] * size[v]))
    areas = np.array([f[-1] for f in faces])
    choice = rng.choice(len(faces), size=count, p=areas / areas.sum())
    points = np.empty((count, 3))
    for i, face_index in enumerate(choice):
        axis, side, u, v, lower, size, _ = faces[face_index]
        points[i, axis] = side
        points[i, u] = lower[u] + rng.uniform() * size[u]
        points[i, v] = lower[v] + rng.uniform() * size[v]
    return points


@dataclass(frozen=True, eq=False)
class GripperModel:
    """Open and closed gripper clouds of exactly CLOUD_POINTS points."""
    open_cloud: np.ndarray
    closed_cloud: np.ndarray
    width: float

    def __post_init__(self):
        for name in ("open_cloud", "closed_cloud"):
            cloud = np.asarray(getattr(self, name), dtype=np.float64)
            if cloud.shape != (CLOUD_POINTS, 3):
                raise SceneValidationError(f"{name} must hold {CLOUD_POINTS} points, got {cloud.shape}")
            cloud.setflags(write=False)
            object.__setattr__(self, name, cloud)
        if self.width <= 0.0:
            raise SceneValidationError("gripper width must be positive")

    @classmethod
    def preset(cls, width: float, seed: int = 0) -> "GripperModel":
        """Procedural gripper with the given inner opening (meters)."""
        if not any(np.isclose(width, w) for w in PRESET_WIDTHS):
            raise SceneValidationError(f"gripper width must be one of {PRESET_WIDTHS} m, got {width}")
        rng = np.random.default_rng(seed)
        open_cloud = sample_box_surfaces(finger_boxes(width), CLOUD_POINTS, rng)
        closed_cloud = sample_box_surfaces(finger_boxes(0.0), CLOUD_POINTS, rng)
        return cls(open_cloud, closed_cloud, float(width))

    def finger_centers(self) -> np.ndarray:
        """(2, 3) centres of the open fingers' inner faces at the grasp centre height."""
        half = self.width / 2.0
        return np.array([[-half, 0.0, 0.0], [half, 0.0, 0.0]])

    def transformed(self, cloud: np.ndarray, position: np.ndarray, rotation: np.ndarray) -> np.ndarray:
        """Cloud(s) in the frame where the grasp has the given pose; batched over leading axes."""
        return np.einsum("...ij,pj->...pi", rotation, cloud) + np.asarray(position)[..., None, :]
