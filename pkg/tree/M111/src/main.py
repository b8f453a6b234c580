"""
M111 - Raytracer
Leaf Node: camera rays and ray / oriented-box intersection

Builds the hit, entry-depth and exit-depth matrices for N rays against the
M bounding volumes of a scene and prunes rays that hit nothing.
External Interface: structured text dump of the intersection table.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    Camera, LeafNode, NodeConfig, NodeLevel, NodeResult, NodeType, Scene, SceneValidationError,
)
from shared.interfaces import FileInterface, InterfaceResult, ensure_parent, file_size
from shared.utils import get_logger

GRAZING_EPS = 1e-6
DIRECTION_EPS = 1e-15

logger = get_logger("M111")


@dataclass(frozen=True, eq=False)
class Ray:
    """A single world-frame ray."""
    origin: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True, eq=False)
class RayBundle:
    """N rays with the flat pixel index (v * W + u) each one came from."""
    origins: np.ndarray
    directions: np.ndarray
    pixel_index: np.ndarray

    def __len__(self) -> int:
        return int(self.origins.shape[0])

    def ray(self, i: int) -> Ray:
        return Ray(self.origins[i], self.directions[i])

    def select(self, rows: np.ndarray) -> "RayBundle":
        rows = np.asarray(rows, dtype=np.int64)
        return RayBundle(self.origins[rows], self.directions[rows], self.pixel_index[rows])


@dataclass(frozen=True, eq=False)
class IntersectionTable:
    """Row-major (ray, object) intersection matrices for surviving rays.

    Object columns follow the scene's object list; `object_ids` holds their ids.
    """
    hit: np.ndarray
    d_min: np.ndarray
    d_max: np.ndarray
    ray_pixel_index: np.ndarray
    origins: np.ndarray
    directions: np.ndarray
    object_ids: np.ndarray
    num_pixels: int

    @property
    def num_rays(self) -> int:
        return int(self.hit.shape[0])

    @property
    def num_objects(self) -> int:
        return int(self.hit.shape[1])

    def lengths(self) -> np.ndarray:
        return np.where(self.hit, self.d_max - self.d_min, 0.0)


def generate_rays(camera: Camera) -> RayBundle:
    """One pinhole ray per pixel through the pixel centre, world frame."""
    v, u = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    x = (u.reshape(-1) + 0.5 - camera.cx) / camera.fx
    y = (v.reshape(-1) + 0.5 - camera.cy) / camera.fy
    local = np.stack([x, y, np.ones_like(x)], axis=-1)
    local /= np.linalg.norm(local, axis=-1, keepdims=True)
    directions = local @ camera.pose.rotation.T
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.pose.translation, directions.shape).copy()
    return RayBundle(origins, directions, np.arange(camera.num_pixels, dtype=np.int64))


def slab_intervals(origins: np.ndarray, directions: np.ndarray, scene: Scene):
    """Unpruned (N, M) entry/exit distances and hit flags.

    Entry distance is clamped to 0 for rays starting inside a box; intervals
    entirely behind the origin or thinner than GRAZING_EPS are misses.
    """
    num_rays = origins.shape[0]
    if len(scene) == 0 or num_rays == 0:
        empty = np.zeros((num_rays, len(scene)))
        return empty.astype(bool), empty, empty.copy()

    rotations, translations = scene.stacked_poses()
    half = scene.stacked_half_extents()
    # object-frame origins and directions, shape (N, M, 3)
    o_local = np.einsum("nk,mkj->nmj", origins, rotations) - np.einsum("mk,mkj->mj", translations, rotations)[None]
    d_local = np.einsum("nk,mkj->nmj", directions, rotations)

    parallel = np.abs(d_local) < DIRECTION_EPS
    inside_slab = np.abs(o_local) <= half[None]
    safe = np.where(parallel, 1.0, d_local)
    t1 = (-half[None] - o_local) / safe
    t2 = (half[None] - o_local) / safe
    t_near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    t_far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))

    d_min = np.max(t_near, axis=-1)
    d_max = np.min(t_far, axis=-1)
    d_min = np.maximum(d_min, 0.0)
    hit = (d_max - d_min) > GRAZING_EPS
    d_min = np.where(hit, d_min, 0.0)
    d_max = np.where(hit, d_max, 0.0)
    return hit, d_min, d_max


def intersect(rays: RayBundle, scene: Scene, num_pixels: Optional[int] = None) -> IntersectionTable:
    """Slab-method intersection of every ray with every bounding volume, pruned."""
    hit, d_min, d_max = slab_intervals(rays.origins, rays.directions, scene)
    keep = np.flatnonzero(hit.any(axis=1)) if hit.size else np.zeros(0, dtype=np.int64)
    total = len(rays) if num_pixels is None else num_pixels
    return IntersectionTable(
        hit=hit[keep],
        d_min=d_min[keep],
        d_max=d_max[keep],
        ray_pixel_index=rays.pixel_index[keep],
        origins=rays.origins[keep],
        directions=rays.directions[keep],
        object_ids=np.asarray(scene.ids, dtype=np.int64),
        num_pixels=total,
    )


def format_table(table: IntersectionTable) -> str:
    """Structured text form of a table, one ray per line."""
    lines = [
        f"# rays={table.num_rays} objects={table.num_objects} pixels={table.num_pixels}",
        "# object_ids=" + ",".join(str(int(i)) for i in table.object_ids),
    ]
    for n in range(table.num_rays):
        cells = []
        for m in range(table.num_objects):
            if table.hit[n, m]:
                cells.append(f"{int(table.object_ids[m])}:[{table.d_min[n, m]:.6f},{table.d_max[n, m]:.6f}]")
        lines.append(f"{int(table.ray_pixel_index[n])} " + " ".join(cells))
    return "\n".join(lines) + "\n"


class TableDumpInterface(FileInterface):
    """Text dump of intersection tables for golden tests."""

    def read(self, path) -> InterfaceResult:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        return InterfaceResult(success=True, data=text, bytes_transferred=len(text))

    def write(self, path, data: Any) -> InterfaceResult:
        text = format_table(data)
        with open(ensure_parent(path), "w", encoding="utf-8") as fh:
            fh.write(text)
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


class RaytracerNode(LeafNode):
    """
    M111 - Raytracer Leaf Node

    Responsibility: camera rays, ray/box intersection, pruning
    External Interface: intersection-table text dump
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M111",
            name="Raytracer",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M110",
            metadata={"interface": "table_dump", "file_types": [".txt"]},
        )
        super().__init__(config)
        self._interface_type = "table_dump"
        self._interface = TableDumpInterface()

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "generate_rays" | "intersect" | "trace" | "dump",
            "camera": Camera, "scene": Scene, "rays": RayBundle,
            "pixels": optional pixel subset for "trace",
            "table": IntersectionTable, "path": str   # dump
        }
        """
        action = input_data.get("action", "trace")
        try:
            if action == "generate_rays":
                data = generate_rays(input_data["camera"])
            elif action == "intersect":
                data = intersect(input_data["rays"], input_data["scene"])
            elif action == "trace":
                data = self.trace(input_data["camera"], input_data["scene"], input_data.get("pixels"))
            elif action == "dump":
                result = self._interface.write(input_data["path"], input_data["table"])
                return NodeResult(success=result.success, data=result.data, node_id=self.node_id)
            else:
                return self.unknown_action(action)
            return NodeResult(success=True, data=data, node_id=self.node_id)
        except Exception as exc:
            logger.error("raytracer %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def trace(self, camera: Camera, scene: Scene, pixels: Optional[np.ndarray] = None) -> IntersectionTable:
        """Rays for all (or the given) pixels intersected with the scene."""
        rays = generate_rays(camera)
        if pixels is not None:
            pixels = np.asarray(pixels, dtype=np.int64)
            if pixels.size and (pixels.min() < 0 or pixels.max() >= camera.num_pixels):
                raise SceneValidationError("pixel index out of range")
            rays = rays.select(pixels)
        return intersect(rays, scene, num_pixels=camera.num_pixels)


# Factory function
def create_node() -> RaytracerNode:
    """Create and return M111 node instance."""
    return RaytracerNode()
