"""
Scene domain types: poses, oriented boxes, latent codes, objects, cameras.

All types are immutable after construction; arrays are copied and frozen.
Points and directions may be batched with shape (..., 3).
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from shared.types.errors import DegenerateInputError, SceneValidationError

ORTHO_TOL = 1e-6
UNIT_TOL = 1e-6


def _frozen(values, shape: Tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != shape:
        raise SceneValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SceneValidationError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping object (or camera) coordinates to world."""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = _frozen(self.rotation, (3, 3), "rotation")
        trans = _frozen(self.translation, (3,), "translation")
        if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHO_TOL:
            raise SceneValidationError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise SceneValidationError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float], translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        return cls.from_rotvec((0.0, 0.0, yaw), translation)

    @classmethod
    def look_at(cls, eye: Sequence[float], target: Sequence[float] = (0.0, 0.0, 0.0),
                up: Sequence[float] = (0.0, 0.0, 1.0)) -> "Pose":
        """Camera-to-world pose with +z looking at target, +y pointing down."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm == 0.0:
            raise DegenerateInputError("eye and target coincide")
        forward /= norm
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            # looking straight along up: pick any horizontal right vector
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return cls(np.stack([right, down, forward], axis=1), eye)

    def to_world(self, point: np.ndarray) -> np.ndarray:
        return np.asarray(point, dtype=np.float64) @ self.rotation.T + self.translation

    def to_local(self, point: np.ndarray) -> np.ndarray:
        return (np.asarray(point, dtype=np.float64) - self.translation) @ self.rotation

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply other first, then self."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def as_matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat


def world_to_object(pose: Pose, point: np.ndarray) -> np.ndarray:
    """Rᵀ·(p − t)."""
    return pose.to_local(point)


def object_to_world(pose: Pose, point: np.ndarray) -> np.ndarray:
    return pose.to_world(point)


def direction_to_object(pose: Pose, direction: np.ndarray) -> np.ndarray:
    """Rᵀ·ω for unit directions; zero-norm and non-unit directions are rejected."""
    direction = np.asarray(direction, dtype=np.float64)
    norms = np.linalg.norm(direction, axis=-1)
    if np.any(norms < 1e-12):
        raise DegenerateInputError("direction has zero norm")
    error = np.abs(norms - 1.0)
    if np.any(error > UNIT_TOL):
        worst = float(np.reshape(norms, -1)[np.argmax(error)])
        raise DegenerateInputError(f"direction must have unit norm within {UNIT_TOL}, got norm {worst:.6g}")
    return direction @ pose.rotation


@dataclass(frozen=True, eq=False)
class BoundingVolume:
    """Oriented box centred at the object origin, axes along the object frame."""
    half_extents: np.ndarray

    def __post_init__(self):
        half = _frozen(self.half_extents, (3,), "half_extents")
        if np.any(half <= 0.0):
            raise SceneValidationError("half_extents must be positive")
        object.__setattr__(self, "half_extents", half)

    def contains(self, p_obj: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return np.all(np.abs(p_obj) <= self.half_extents + tol, axis=-1)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return signs * self.half_extents

    @property
    def diagonal(self) -> float:
        return float(2.0 * np.linalg.norm(self.half_extents))


@dataclass(frozen=True, eq=False)
class LatentCode:
    """Per-object latent vector."""
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if vals.size == 0:
            raise SceneValidationError("latent code is empty")
        if not np.all(np.isfinite(vals)):
            raise SceneValidationError("latent code must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def check_dim(self, latent_dim: int) -> None:
        if self.dim != latent_dim:
            raise SceneValidationError(f"latent has dimension {self.dim}, expected {latent_dim}")

    @classmethod
    def zeros(cls, latent_dim: int) -> "LatentCode":
        return cls(np.zeros(latent_dim))


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    """One object: pose, volume, latent code and a dense integer id."""
    id: int
    pose: Pose
    volume: BoundingVolume
    latent: LatentCode


@dataclass(frozen=True, eq=False)
class Scene:
    """Ordered objects plus a flat background colour."""
    objects: Tuple[ObjectInstance, ...] = ()
    background_color: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        objects = tuple(self.objects)
        ids = [obj.id for obj in objects]
        if len(set(ids)) != len(ids):
            raise SceneValidationError(f"object ids must be unique, got {ids}")
        bg = _frozen(self.background_color, (3,), "background_color")
        if np.any(bg < 0.0) or np.any(bg > 1.0):
            raise SceneValidationError("background_color must lie in [0, 1]")
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "background_color", bg)

    def __len__(self) -> int:
        return len(self.objects)

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(obj.id for obj in self.objects)

    def object_by_id(self, object_id: int) -> ObjectInstance:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise SceneValidationError(f"no object with id {object_id}")

    def latent_matrix(self, latent_dim: Optional[int] = None) -> np.ndarray:
        """(M, D) latents in object-list order."""
        if not self.objects:
            return np.zeros((0, latent_dim or 0))
        for obj in self.objects:
            if latent_dim is not None:
                obj.latent.check_dim(latent_dim)
        return np.stack([obj.latent.values for obj in self.objects])

    def stacked_poses(self) -> Tuple[np.ndarray, np.ndarray]:
        """(M, 3, 3) rotations and (M, 3) translations."""
        if not self.objects:
            return np.zeros((0, 3, 3)), np.zeros((0, 3))
        return (np.stack([obj.pose.rotation for obj in self.objects]),
                np.stack([obj.pose.translation for obj in self.objects]))

    def stacked_half_extents(self) -> np.ndarray:
        if not self.objects:
            return np.zeros((0, 3))
        return np.stack([obj.volume.half_extents for obj in self.objects])

    def with_object_pose(self, object_id: int, pose: Pose) -> "Scene":
        """Rearranged copy with one object moved."""
        self.object_by_id(object_id)
        objects = tuple(replace(obj, pose=pose) if obj.id == object_id else obj for obj in self.objects)
        return Scene(objects, self.background_color)

    def with_latents(self, latents: Dict[int, LatentCode]) -> "Scene":
        objects = tuple(replace(obj, latent=latents.get(obj.id, obj.latent)) for obj in self.objects)
        return Scene(objects, self.background_color)

    def permuted(self, order: Iterable[int]) -> "Scene":
        order = list(order)
        return Scene(tuple(self.objects[i] for i in order), self.background_color)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; pose is camera-to-world with +z forward, +x right, +y down.

    Pixel (u, v) is sampled at its centre (u + 0.5, v + 0.5) in continuous
    image coordinates, so a symmetric camera has cx = W / 2 and cy = H / 2.
    """
    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise SceneValidationError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise SceneValidationError("image size must be at least 1x1")

    @property
    def num_pixels(self) -> int:
        return self.width * self.height

    @classmethod
    def from_fov(cls, pose: Pose, width: int, height: int, fov_x_deg: float) -> "Camera":
        fx = 0.5 * width / np.tan(np.deg2rad(fov_x_deg) / 2.0)
        return cls(pose, fx, fx, width / 2.0, height / 2.0, width, height)

    @classmethod
    def look_at(cls, eye: Sequence[float], width: int, height: int, fov_x_deg: float,
                target: Sequence[float] = (0.0, 0.0, 0.0)) -> "Camera":
        return cls.from_fov(Pose.look_at(eye, target), width, height, fov_x_deg)


@dataclass(frozen=True, eq=False)
class GraspAnnotation:
    """Labelled grasp in an object's frame."""
    object_id: int
    position: np.ndarray
    rotation: np.ndarray
    score: float

    def __post_init__(self):
        pos = _frozen(self.position, (3,), "grasp position")
        rot = _frozen(self.rotation, (3, 3), "grasp rotation")
        if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise SceneValidationError("grasp rotation must be a proper rotation")
        if not 0.0 <= float(self.score) <= 1.0:
            raise SceneValidationError(f"grasp score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "score", float(self.score))
