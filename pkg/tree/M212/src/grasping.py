"""
Grasp annotation scoring on analytic objects.

score = (1/N) Σ Γ(perturbed pose) over N random pose perturbations, where Γ
is a pluggable stability oracle. The default oracle is an antipodal-contact
test: the jaws must fit around the object, the fingers must reach their
pose from outside without touching it, and both contacts on the closing
line must have normals inside the friction cone.
"""
from dataclasses import dataclass
from typing import List, Optional, Protocol

import numpy as np
from scipy.spatial.transform import Rotation

from shared.types import GraspAnnotation, SceneValidationError
from tree.M212.src.shapes import AnalyticObject
from tree.M221.src.gripper import FINGER_WIDTH, HAND_DEPTH, PALM_THICKNESS, GripperModel

MAX_TRANSLATION = 0.005
MAX_ROTATION_DEG = 5.0
DEFAULT_TRIALS = 50


class StabilityOracle(Protocol):
    """Binary grasp outcome per pose; poses are object-frame (N, 3) and (N, 3, 3)."""

    def __call__(self, obj: AnalyticObject, positions: np.ndarray, rotations: np.ndarray,
                 gripper: GripperModel) -> np.ndarray:
        ...


@dataclass
class AntipodalOracle:
    """Parallel-jaw closure with a friction-cone test on both contacts."""
    friction: float = 0.5
    approach_distance: float = 0.05
    scan_steps: int = 120
    path_steps: int = 24

    def __call__(self, obj: AnalyticObject, positions: np.ndarray, rotations: np.ndarray,
                 gripper: GripperModel) -> np.ndarray:
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
        b = rotations[:, :, 0]
        a = rotations[:, :, 2]
        half = gripper.width / 2.0

        # finger centre lines, swept from the approach start to the final pose, and the palm
        finger_x = half + FINGER_WIDTH / 2.0
        z = np.linspace(-HAND_DEPTH / 2.0 - self.approach_distance, HAND_DEPTH / 2.0, self.path_steps)
        palm_x = np.linspace(-finger_x, finger_x, self.path_steps)
        local = np.concatenate([
            np.stack([np.full_like(z, finger_x), np.zeros_like(z), z], axis=-1),
            np.stack([np.full_like(z, -finger_x), np.zeros_like(z), z], axis=-1),
            np.stack([palm_x, np.zeros_like(palm_x),
                      np.full_like(palm_x, -HAND_DEPTH / 2.0 - PALM_THICKNESS / 2.0)], axis=-1),
        ])
        swept = np.einsum("nij,pj->npi", rotations, local) + positions[:, None, :]
        path_clear = np.all(obj.sdf(swept) > 0.0, axis=-1)

        # jaw tips must sit outside the object
        tips_clear = (obj.sdf(positions + half * b) > 0.0) & (obj.sdf(positions - half * b) > 0.0)

        # contacts: first surface point met by each jaw closing towards the centre
        s = np.linspace(half, 0.0, self.scan_steps)
        cos_cone = np.cos(np.arctan(self.friction))
        stable = np.ones(len(positions), dtype=bool)
        for sign in (1.0, -1.0):
            line = positions[:, None, :] + sign * s[None, :, None] * b[:, None, :]
            inside = obj.sdf(line) <= 0.0
            found = inside.any(axis=1)
            first = np.argmax(inside, axis=1)
            contact = line[np.arange(len(positions)), first]
            normal = obj.normal(contact)
            # the jaw pushes along −sign·b; the contact holds if that force lies in the cone of −n
            alignment = np.einsum("ni,ni->n", sign * b, normal)
            stable &= found & (alignment >= cos_cone)
        return path_clear & tips_clear & stable


def perturb_poses(position: np.ndarray, rotation: np.ndarray, count: int, rng: np.random.Generator,
                  max_translation: float = MAX_TRANSLATION, max_rotation_deg: float = MAX_ROTATION_DEG):
    """`count` poses perturbed uniformly within a translation ball and a rotation-angle ball."""
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    radii = max_translation * rng.uniform(size=count) ** (1.0 / 3.0)
    axes = rng.normal(size=(count, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    angles = np.deg2rad(max_rotation_deg) * rng.uniform(size=count) ** (1.0 / 3.0)
    delta = Rotation.from_rotvec(axes * angles[:, None]).as_matrix()
    positions = np.asarray(position)[None, :] + directions * radii[:, None]
    rotations = np.einsum("nij,jk->nik", delta, np.asarray(rotation))
    return positions, rotations


def score_grasp(obj: AnalyticObject, position: np.ndarray, rotation: np.ndarray, gripper: GripperModel,
                trials: int = DEFAULT_TRIALS, rng: Optional[np.random.Generator] = None,
                oracle: Optional[StabilityOracle] = None, max_translation: float = MAX_TRANSLATION,
                max_rotation_deg: float = MAX_ROTATION_DEG) -> float:
    """Fraction of perturbed poses the oracle judges stable."""
    if trials < 1:
        raise SceneValidationError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng() if rng is None else rng
    oracle = AntipodalOracle() if oracle is None else oracle
    positions, rotations = perturb_poses(position, rotation, trials, rng, max_translation, max_rotation_deg)
    outcomes = np.asarray(oracle(obj, positions, rotations, gripper), dtype=bool)
    return float(outcomes.sum()) / trials


def rotation_from_axes(approach: np.ndarray, closing: np.ndarray) -> np.ndarray:
    """[b, a×b, a] for unit, perpendicular approach a and closing b."""
    return np.stack([closing, np.cross(approach, closing), approach], axis=-1)


def _perpendicular_unit(b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        v -= v.dot(b) * b
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def sample_annotations(obj: AnalyticObject, object_id: int, gripper: GripperModel, count: int,
                       rng: np.random.Generator, trials: int = DEFAULT_TRIALS,
                       oracle: Optional[StabilityOracle] = None) -> List[GraspAnnotation]:
    """Labelled grasps centred inside the object.

    Half of the closing axes follow the local sdf gradient (likely antipodal),
    the rest are uniform; approach axes are uniform perpendicular to them.
    """
    if count < 0:
        raise SceneValidationError("count must be non-negative")
    half = obj.support_half_extents
    annotations: List[GraspAnnotation] = []
    while len(annotations) < count:
        p = rng.uniform(-half, half)
        if obj.sdf(p[None])[0] >= 0.0:
            continue
        if len(annotations) % 2 == 0:
            b = obj.normal(p[None])[0]
            if np.linalg.norm(b) < 0.5:
                b = rng.normal(size=3)
            b = b / np.linalg.norm(b) * rng.choice([-1.0, 1.0])
        else:
            b = rng.normal(size=3)
            b /= np.linalg.norm(b)
        a = _perpendicular_unit(b, rng)
        rotation = rotation_from_axes(a, b)
        score = score_grasp(obj, p, rotation, gripper, trials, rng, oracle)
        annotations.append(GraspAnnotation(object_id, p, rotation, score))
    return annotations
