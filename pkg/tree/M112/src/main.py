"""
M112 - Raymarcher
Leaf Node: fixed-budget, depth-sorted sampling inside object volumes

Every surviving ray receives exactly J+1 samples. The budget is split between
the objects the ray hits (see shared.utils.sample_balancer); each object's
[d_min, d_max] interval is stratified into its share, one sample per stratum,
and the samples of all objects are merged by depth (object id breaks ties).
Each sample carries its stratum width as segment length, so empty gaps
between objects never receive optical depth.
External Interface: structured text dump of sample sequences.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import LeafNode, MarchingError, NodeConfig, NodeLevel, NodeResult, NodeType
from shared.interfaces import FileInterface, InterfaceResult, ensure_parent, file_size
from shared.utils import allocate_samples, get_logger
from tree.M111.src.main import GRAZING_EPS, IntersectionTable

logger = get_logger("M112")


@dataclass(frozen=True, eq=False)
class RaySampleBatch:
    """(N, J+1) samples per surviving ray.

    `columns` index the scene's object list, `object_ids` hold the ids.
    """
    positions: np.ndarray
    depths: np.ndarray
    deltas: np.ndarray
    object_ids: np.ndarray
    columns: np.ndarray
    directions: np.ndarray
    ray_pixel_index: np.ndarray
    num_pixels: int

    @property
    def num_rays(self) -> int:
        return int(self.depths.shape[0])

    @property
    def samples_per_ray(self) -> int:
        return int(self.depths.shape[1])

    def counts_per_object(self, num_objects: int) -> np.ndarray:
        """(N, M) number of samples each object received on each ray."""
        counts = np.zeros((self.num_rays, num_objects), dtype=np.int64)
        rows = np.repeat(np.arange(self.num_rays), self.samples_per_ray)
        np.add.at(counts, (rows, self.columns.reshape(-1)), 1)
        return counts


def stratify(start: np.ndarray, length: np.ndarray, count: np.ndarray, index: np.ndarray,
             rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Depth of sample `index` of `count` strata over [start, start + length]."""
    offset = 0.5 if rng is None else rng.uniform(0.0, 1.0, size=np.shape(index))
    return start + (index + offset) * (length / count)


def march(table: IntersectionTable, num_samples: int,
          rng: Optional[np.random.Generator] = None) -> RaySampleBatch:
    """Exactly `num_samples` depth-sorted samples per ray of the table.

    rng=None places samples at stratum midpoints; a generator jitters each
    sample uniformly inside its stratum. Segment lengths are the gaps between
    consecutive depths; the last one runs to the ray's exit depth.
    """
    if num_samples < 1:
        raise MarchingError(f"samples per ray must be >= 1, got {num_samples}")
    num_rays, num_objects = table.num_rays, table.num_objects
    if num_rays == 0:
        empty = np.zeros((0, num_samples))
        return RaySampleBatch(np.zeros((0, num_samples, 3)), empty, empty.copy(),
                              np.zeros((0, num_samples), dtype=np.int64),
                              np.zeros((0, num_samples), dtype=np.int64),
                              np.zeros((0, 3)), np.zeros(0, dtype=np.int64), table.num_pixels)

    lengths = table.lengths()
    if np.any(table.hit & ~(table.d_max >= table.d_min)) or np.any(table.d_min < 0.0):
        raise MarchingError("intersection table holds an invalid interval")
    usable = table.hit & (lengths > GRAZING_EPS)
    if not np.all(usable.any(axis=1)):
        raise MarchingError("a ray has no interval long enough to allocate samples")

    counts = allocate_samples(num_samples, usable, lengths, table.object_ids)

    flat_counts = counts.reshape(-1)
    cell = np.repeat(np.arange(flat_counts.size), flat_counts)
    first = np.concatenate([[0], np.cumsum(flat_counts)[:-1]])
    index = np.arange(cell.size) - first[cell]
    ray, column = np.divmod(cell, num_objects)

    depth = stratify(table.d_min[ray, column], lengths[ray, column], flat_counts[cell], index, rng)

    depth = depth.reshape(num_rays, num_samples)
    column = column.reshape(num_rays, num_samples)
    ids = table.object_ids[column]

    order = np.lexsort((ids, depth), axis=-1)
    depth = np.take_along_axis(depth, order, axis=-1)
    column = np.take_along_axis(column, order, axis=-1)
    ids = np.take_along_axis(ids, order, axis=-1)

    # gaps between objects fold into the last sample before them
    exit_depth = np.where(usable, table.d_max, -np.inf).max(axis=1)
    delta = np.empty_like(depth)
    delta[:, :-1] = np.diff(depth, axis=-1)
    delta[:, -1] = exit_depth - depth[:, -1]

    positions = table.origins[:, None, :] + depth[..., None] * table.directions[:, None, :]
    return RaySampleBatch(positions, depth, delta, ids, column, table.directions,
                          table.ray_pixel_index, table.num_pixels)


def format_samples(batch: RaySampleBatch) -> str:
    """One line per ray: pixel followed by (depth, object id) pairs."""
    lines = [f"# rays={batch.num_rays} samples_per_ray={batch.samples_per_ray}"]
    for n in range(batch.num_rays):
        pairs = " ".join(f"({d:.6f},{int(o)})" for d, o in zip(batch.depths[n], batch.object_ids[n]))
        lines.append(f"{int(batch.ray_pixel_index[n])} {pairs}")
    return "\n".join(lines) + "\n"


class SampleDumpInterface(FileInterface):
    """Text dump of marched sample sequences."""

    def read(self, path) -> InterfaceResult:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        return InterfaceResult(success=True, data=text, bytes_transferred=len(text))

    def write(self, path, data: Any) -> InterfaceResult:
        with open(ensure_parent(path), "w", encoding="utf-8") as fh:
            fh.write(format_samples(data))
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


class RaymarcherNode(LeafNode):
    """
    M112 - Raymarcher Leaf Node

    Responsibility: per-ray sample allocation and placement
    External Interface: sample-sequence text dump
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M112",
            name="Raymarcher",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M110",
            metadata={"interface": "sample_dump", "file_types": [".txt"]},
        )
        super().__init__(config)
        self._interface_type = "sample_dump"
        self._interface = SampleDumpInterface()

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "march" | "dump",
            "table": IntersectionTable,
            "num_samples": int,            # J + 1
            "rng": optional numpy Generator,
            "batch": RaySampleBatch, "path": str   # dump
        }
        """
        action = input_data.get("action", "march")
        try:
            if action == "march":
                batch = march(input_data["table"], int(input_data["num_samples"]), input_data.get("rng"))
                return NodeResult(success=True, data=batch, node_id=self.node_id)
            if action == "dump":
                result = self._interface.write(input_data["path"], input_data["batch"])
                return NodeResult(success=result.success, data=result.data, node_id=self.node_id)
            return self.unknown_action(action)
        except Exception as exc:
            logger.error("raymarcher %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)


# Factory function
def create_node() -> RaymarcherNode:
    """Create and return M112 node instance."""
    return RaymarcherNode()
