"""
M222 - Field Tools
Leaf Node: voxel maps and collision queries from the density field

Voxelization thresholds the field density at the cell centres of a res³ grid
spanning an object's volume (or the union of a scene's volumes). Collision
queries test points against every object volume that contains them.
External Interface: voxel exports (sparse text, dense bitmap).
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    DatasetFormatError, LeafNode, NodeConfig, NodeLevel, NodeResult, NodeType, ObjectInstance, Pose, Scene,
    SceneValidationError,
)
from shared.interfaces import FileInterface, InterfaceResult, RadianceField, ensure_parent, file_size
from shared.utils import get_logger, map_chunks
from shared.utils.autodiff import value_of
from shared.utils.config import node_defaults
from tree.M221.src.main import GroundPlane, grid_points, scene_density

logger = get_logger("M222")

SPARSE_MAGIC = "# neural-scene voxels v1"
DENSE_MAGIC = b"NSVX"
DENSE_VERSION = 1
DENSE_HEADER = struct.Struct("<4sHI3d3d12d")


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """res³ occupancy over a box, x index slowest; `pose` maps grid coordinates to world."""
    res: int
    origin: np.ndarray
    cell_size: np.ndarray
    occupancy: np.ndarray
    pose: Pose = Pose.identity()

    def __post_init__(self):
        occupancy = np.asarray(self.occupancy, dtype=bool).reshape(-1)
        if self.res < 1 or occupancy.size != self.res ** 3:
            raise SceneValidationError(f"occupancy must hold res³ = {self.res ** 3} cells, got {occupancy.size}")
        object.__setattr__(self, "occupancy", occupancy)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "cell_size", np.asarray(self.cell_size, dtype=np.float64).reshape(3))

    @property
    def volume(self) -> np.ndarray:
        return self.occupancy.reshape(self.res, self.res, self.res)

    @property
    def occupied_fraction(self) -> float:
        return float(self.occupancy.mean())

    def centers(self) -> np.ndarray:
        """(res³, 3) cell centres in grid coordinates."""
        axes = [self.origin[i] + (np.arange(self.res) + 0.5) * self.cell_size[i] for i in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=-1)

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.volume)


def _check(res: int, threshold: float) -> None:
    if res < 2:
        raise SceneValidationError(f"voxel resolution must be >= 2, got {res}")
    if threshold <= 0.0:
        raise SceneValidationError("density threshold must be positive")


def voxelize(obj: ObjectInstance, field: RadianceField, res: int, threshold: float, column: int = 0,
             threads: int = 1) -> VoxelGrid:
    """Occupancy (σ ≥ threshold) at the cell centres of a grid spanning the object's volume."""
    _check(res, threshold)
    half = obj.volume.half_extents
    centers = grid_points(half, res)

    def query(start: int, stop: int):
        return value_of(field.density(centers[start:stop], np.full(stop - start, column, dtype=np.int64)))

    sigma = np.concatenate(map_chunks(query, len(centers), threads=threads))
    return VoxelGrid(res, -half, 2.0 * half / res, sigma >= threshold, obj.pose)


def scene_bounds(scene: Scene):
    """World axis-aligned box around every object volume."""
    if len(scene) == 0:
        raise SceneValidationError("scene has no objects to voxelize")
    corners = np.concatenate([obj.pose.to_world(obj.volume.corners()) for obj in scene.objects])
    return corners.min(axis=0), corners.max(axis=0)


def voxelize_scene(scene: Scene, field: RadianceField, res: int, threshold: float,
                   ground: Optional[GroundPlane] = None, threads: int = 1) -> VoxelGrid:
    """World-aligned union grid; density is summed over the volumes covering each centre."""
    _check(res, threshold)
    lo, hi = scene_bounds(scene)
    cell = (hi - lo) / res
    grid = VoxelGrid(res, lo, cell, np.zeros(res ** 3, dtype=bool))
    centers = grid.centers()

    def query(start: int, stop: int):
        return scene_density(centers[start:stop], scene, field, ground)

    sigma = np.concatenate(map_chunks(query, len(centers), threads=threads))
    return VoxelGrid(res, lo, cell, sigma >= threshold)


def query_collision(points: np.ndarray, scene: Scene, field: RadianceField, threshold: float,
                    ground: Optional[GroundPlane] = None) -> np.ndarray:
    """Per-point flag: some object whose volume contains the point has σ ≥ threshold there.

    Points inside the optional ground half-space always collide.
    """
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise SceneValidationError("collision query points must be finite")
    if threshold <= 0.0:
        raise SceneValidationError("density threshold must be positive")
    flat = points.reshape(-1, 3)
    hits = np.zeros(len(flat), dtype=bool)
    for column, obj in enumerate(scene.objects):
        p_obj = obj.pose.to_local(flat)
        inside = np.flatnonzero(obj.volume.contains(p_obj))
        if inside.size:
            sigma = value_of(field.density(p_obj[inside], np.full(inside.size, column, dtype=np.int64)))
            hits[inside] |= sigma >= threshold
    if ground is not None:
        hits |= flat[:, 2] < ground.height
    return hits.reshape(points.shape[:-1])


def downsample_or(grid: VoxelGrid) -> VoxelGrid:
    """Half-resolution grid where a cell is occupied iff any of its 8 children is."""
    if grid.res % 2:
        raise SceneValidationError("downsampling needs an even resolution")
    half = grid.res // 2
    blocks = grid.volume.reshape(half, 2, half, 2, half, 2)
    return VoxelGrid(half, grid.origin, grid.cell_size * 2.0, blocks.any(axis=(1, 3, 5)), grid.pose)


# -- exports -------------------------------------------------------------------------

def _header_values(grid: VoxelGrid) -> list:
    return [*grid.origin, *grid.cell_size, *grid.pose.rotation.reshape(-1), *grid.pose.translation]


def format_sparse(grid: VoxelGrid) -> str:
    """Metadata comment lines, then one `i j k` line per occupied cell."""
    lines = [
        SPARSE_MAGIC,
        f"# res {grid.res}",
        "# origin " + " ".join(f"{v:.9g}" for v in grid.origin),
        "# cell_size " + " ".join(f"{v:.9g}" for v in grid.cell_size),
        "# pose " + " ".join(f"{v:.9g}" for v in [*grid.pose.rotation.reshape(-1), *grid.pose.translation]),
    ]
    lines.extend(f"{i} {j} {k}" for i, j, k in grid.occupied_indices())
    return "\n".join(lines) + "\n"


def parse_sparse(text: str) -> VoxelGrid:
    lines = text.splitlines()
    if not lines or lines[0] != SPARSE_MAGIC:
        raise DatasetFormatError("not a sparse voxel file")
    meta = {}
    cells = []
    for line in lines[1:]:
        if line.startswith("#"):
            key, *values = line[1:].split()
            meta[key] = [float(v) for v in values]
        elif line.strip():
            cells.append([int(v) for v in line.split()])
    try:
        res = int(meta["res"][0])
        pose_values = np.array(meta["pose"])
        pose = Pose(pose_values[:9].reshape(3, 3), pose_values[9:])
        origin, cell = meta["origin"], meta["cell_size"]
    except (KeyError, IndexError, ValueError) as exc:
        raise DatasetFormatError(f"sparse voxel header incomplete: {exc}") from exc
    volume = np.zeros((res, res, res), dtype=bool)
    if cells:
        idx = np.asarray(cells, dtype=np.int64)
        if idx.shape[1] != 3 or idx.min() < 0 or idx.max() >= res:
            raise DatasetFormatError("sparse voxel cell index out of range")
        volume[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(res, origin, cell, volume, pose)


def encode_dense(grid: VoxelGrid) -> bytes:
    """Header then occupancy bits, little bit order, x index slowest."""
    header = DENSE_HEADER.pack(DENSE_MAGIC, DENSE_VERSION, grid.res, *_header_values(grid))
    return header + np.packbits(grid.occupancy, bitorder="little").tobytes()


def decode_dense(blob: bytes) -> VoxelGrid:
    if len(blob) < DENSE_HEADER.size:
        raise DatasetFormatError("dense voxel file truncated in header")
    magic, version, res, *values = DENSE_HEADER.unpack(blob[:DENSE_HEADER.size])
    if magic != DENSE_MAGIC:
        raise DatasetFormatError(f"bad dense voxel magic {magic!r}")
    if version != DENSE_VERSION:
        raise DatasetFormatError(f"unsupported dense voxel version {version}")
    count = res ** 3
    payload = blob[DENSE_HEADER.size:]
    if len(payload) != (count + 7) // 8:
        raise DatasetFormatError("dense voxel payload size does not match res")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")[:count].astype(bool)
    values = np.asarray(values)
    pose = Pose(values[6:15].reshape(3, 3), values[15:18])
    return VoxelGrid(res, values[:3], values[3:6], bits, pose)


class VoxelFileInterface(FileInterface):
    """Voxel grids as sparse text (.txt) or dense bitmaps (anything else)."""

    def read(self, path) -> InterfaceResult:
        blob = Path(path).read_bytes()
        grid = decode_dense(blob) if blob[:4] == DENSE_MAGIC else parse_sparse(blob.decode("utf-8"))
        return InterfaceResult(success=True, data=grid, bytes_transferred=len(blob))

    def write(self, path, data: Any) -> InterfaceResult:
        path = ensure_parent(path)
        if path.suffix == ".txt":
            path.write_text(format_sparse(data), encoding="utf-8")
        else:
            path.write_bytes(encode_dense(data))
        return InterfaceResult(success=True, data={"path": str(path), "occupied": int(data.occupancy.sum())},
                               bytes_transferred=file_size(path))


class FieldToolsNode(LeafNode):
    """
    M222 - Field Tools Leaf Node

    Responsibility: voxel grids and point collision queries
    External Interface: voxel files (.txt sparse, .vox dense)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M222",
            name="Field Tools",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M220",
            metadata={"interface": "voxel_file", "file_types": [".txt", ".vox"]},
        )
        super().__init__(config)
        self._interface_type = "voxel_file"
        self._interface = VoxelFileInterface()
        self.defaults = node_defaults("M222")

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "voxelize" | "voxelize_scene" | "collide" | "downsample" | "write" | "read",
            "object": ObjectInstance, "column": int, "scene": Scene, "field": RadianceField,
            "res": int, "threshold": float, "points": (N, 3), "grid": VoxelGrid, "path": str
        }
        """
        action = input_data.get("action", "voxelize")
        try:
            res = int(self._setting(input_data, "res"))
            threshold = float(self._setting(input_data, "threshold"))
            if action == "voxelize":
                data = voxelize(input_data["object"], input_data["field"], res, threshold,
                                int(input_data.get("column", 0)), self.threads)
            elif action == "voxelize_scene":
                data = voxelize_scene(input_data["scene"], input_data["field"], res, threshold,
                                      input_data.get("ground"), self.threads)
            elif action == "collide":
                data = query_collision(input_data["points"], input_data["scene"], input_data["field"], threshold,
                                       input_data.get("ground"))
            elif action == "downsample":
                data = downsample_or(input_data["grid"])
            elif action == "write":
                data = self._interface.write(input_data["path"], input_data["grid"]).data
            elif action == "read":
                data = self._interface.read(input_data["path"]).data
            else:
                return self.unknown_action(action)
            return NodeResult(success=True, data=data, node_id=self.node_id)
        except Exception as exc:
            logger.error("field tools %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def _setting(self, input_data: Dict[str, Any], key: str) -> Any:
        """Request value unless absent or None; explicit zeros reach validation."""
        value = input_data.get(key)
        return self.defaults[key] if value is None else value


# Factory function
def create_node() -> FieldToolsNode:
    """Create and return M222 node instance."""
    return FieldToolsNode()
