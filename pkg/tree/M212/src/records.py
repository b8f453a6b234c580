"""Dataset records: generation settings, views, scenes and whole datasets."""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from shared.types import Camera, GraspAnnotation, Scene, SceneValidationError
from shared.utils.config import dataclass_from_dict, node_defaults
from tree.M212.src.shapes import SHAPES, AnalyticField, AnalyticObject

LAYOUTS = ("single", "falling")
SPLITS = ("train", "test")


@dataclass
class DatasetConfig:
    """Desk-scale generation settings."""
    num_objects: int = 16
    num_test_objects: int = 4
    num_views: int = 50
    num_grasps: int = 200
    width: int = 64
    height: int = 64
    layout: str = "single"
    camera_distance: float = 1.0
    fov_deg: float = 12.0
    falling_fov_deg: float = 25.0
    min_objects: int = 3
    max_objects: int = 5
    oracle_samples: int = 256
    grasp_trials: int = 50
    gripper_width: float = 0.06
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    shapes: Tuple[str, ...] = SHAPES
    seed: int = 0

    def __post_init__(self):
        self.background = tuple(float(c) for c in self.background)
        self.shapes = tuple(self.shapes)
        if self.layout not in LAYOUTS:
            raise SceneValidationError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.num_objects < 1 or self.num_views < 1 or self.num_grasps < 0 or self.num_test_objects < 0:
            raise SceneValidationError("object and view counts must be >= 1 and grasp counts >= 0")
        if not 1 <= self.min_objects <= self.max_objects:
            raise SceneValidationError("need 1 <= min_objects <= max_objects")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown or not self.shapes:
            raise SceneValidationError(f"shapes must be a non-empty subset of {SHAPES}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetConfig":
        return dataclass_from_dict(cls, data)

    def to_dict(self) -> Dict[str, Any]:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["background"] = list(self.background)
        out["shapes"] = list(self.shapes)
        return out

    @classmethod
    def defaults(cls) -> "DatasetConfig":
        return cls.from_dict(node_defaults("M212"))


@dataclass(frozen=True, eq=False)
class View:
    """One posed image, H×W×3 in [0, 1]."""
    camera: Camera
    image: np.ndarray

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        if image.shape != (self.camera.height, self.camera.width, 3):
            raise SceneValidationError(
                f"image shape {image.shape} does not match camera {self.camera.height}x{self.camera.width}")
        object.__setattr__(self, "image", image)


@dataclass(eq=False)
class SceneRecord:
    """A layout, its analytic objects (same order), posed images and grasp labels.

    Object ids are global across the dataset and index the latent table.
    """
    name: str
    split: str
    scene: Scene
    objects: List[AnalyticObject]
    views: List[View] = field(default_factory=list)
    grasps: List[GraspAnnotation] = field(default_factory=list)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise SceneValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if len(self.objects) != len(self.scene.objects):
            raise SceneValidationError("one analytic object per layout object is required")
        ids = set(self.scene.ids)
        stray = [g.object_id for g in self.grasps if g.object_id not in ids]
        if stray:
            raise SceneValidationError(f"grasp annotations reference unknown objects {sorted(set(stray))}")

    @property
    def object_ids(self) -> Tuple[int, ...]:
        return self.scene.ids

    def analytic_field(self) -> AnalyticField:
        return AnalyticField(self.objects)

    def grasps_for(self, object_id: int) -> List[GraspAnnotation]:
        return [g for g in self.grasps if g.object_id == object_id]


@dataclass(eq=False)
class SceneDataset:
    records: List[SceneRecord]
    config: DatasetConfig = field(default_factory=DatasetConfig)

    def __post_init__(self):
        seen: Dict[int, str] = {}
        for record in self.records:
            for object_id in record.object_ids:
                if object_id in seen:
                    raise SceneValidationError(f"object id {object_id} appears in {seen[object_id]} and {record.name}")
                seen[object_id] = record.name

    def __len__(self) -> int:
        return len(self.records)

    @property
    def num_objects(self) -> int:
        """Latent table size: one row per global object id."""
        ids = [i for record in self.records for i in record.object_ids]
        return max(ids) + 1 if ids else 0

    def split(self, name: str) -> "SceneDataset":
        return SceneDataset([r for r in self.records if r.split == name], self.config)

    def record(self, name: str) -> SceneRecord:
        for record in self.records:
            if record.name == name:
                return record
        raise SceneValidationError(f"no scene named {name!r}")

    def object_ids(self, split: str = "") -> List[int]:
        return [i for r in self.records if not split or r.split == split for i in r.object_ids]


def splittable(total: int, low: int, high: int) -> bool:
    """True when total is a sum of scene sizes in [low, high] (zero scenes for total 0)."""
    return total == 0 or any(k * low <= total <= k * high for k in range(1, total // low + 1))


def object_counts(total: int, rng: np.random.Generator, low: int, high: int) -> List[int]:
    """Scene sizes in [low, high] summing to total.

    Each draw is uniform over the sizes that leave a remainder which can still
    be split the same way.
    """
    if not splittable(total, low, high):
        raise SceneValidationError(f"{total} objects cannot be split into scenes of {low} to {high} objects")
    counts: List[int] = []
    remaining = total
    while remaining > 0:
        options = [n for n in range(low, min(high, remaining) + 1) if splittable(remaining - n, low, high)]
        n = int(rng.choice(options))
        counts.append(n)
        remaining -= n
    return counts
