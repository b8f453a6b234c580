"""
M221 - Grasp Engine
Leaf Node: grid grasp proposal, rotation assembly and density filtering

Queries the grasp decoder on a res³ grid of cell centres inside an object's
volume, assembles R = [b, a×b, a], keeps the top K by score and filters them
by summing field density over the open and closed gripper clouds.
External Interface: grasp text files and gripper cloud files.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    DatasetFormatError, DegenerateInputError, LeafNode, NodeConfig, NodeLevel, NodeResult, NodeType,
    ObjectInstance, Scene, SceneValidationError,
)
from shared.interfaces import FileInterface, GraspField, InterfaceResult, RadianceField, ensure_parent, file_size
from shared.utils import autodiff as ad
from shared.utils import get_logger, map_chunks
from shared.utils.autodiff import ArrayLike
from shared.utils.config import dataclass_from_dict, node_defaults
from tree.M221.src.gripper import CLOUD_POINTS, GripperModel

logger = get_logger("M221")

VECTOR_EPS = 1e-9


@dataclass
class GraspConfig:
    res: int = 8
    top_k: int = 10
    t_open: float = 1.0
    t_closed: float = 50.0
    gripper_width: float = 0.06
    ground: bool = False
    ground_height: float = 0.0
    ground_sigma: float = 1000.0
    gripper_seed: int = 0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GraspConfig":
        return dataclass_from_dict(cls, data)

    def to_dict(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def defaults(cls) -> "GraspConfig":
        return cls.from_dict(node_defaults("M221"))


@dataclass(frozen=True)
class GroundPlane:
    """Obstacle half-space z < height with constant density; collision queries only."""
    height: float = 0.0
    sigma: float = 1000.0

    def density(self, points_world: np.ndarray) -> np.ndarray:
        return np.where(points_world[..., 2] < self.height, self.sigma, 0.0)


@dataclass(frozen=True, eq=False)
class GraspProposal:
    """Grasp in the object's frame; grid_index orders score ties."""
    position: np.ndarray
    rotation: np.ndarray
    score: float
    grid_index: int = -1


@dataclass(frozen=True, eq=False)
class GraspEvaluation:
    proposal: GraspProposal
    open_sum: float
    closed_sum: float
    open_ok: bool
    closed_ok: bool

    @property
    def passed(self) -> bool:
        return self.open_ok and self.closed_ok


@dataclass
class ThresholdReport:
    """Density sums over oracle-accepted grasps and the thresholds they suggest."""
    open_sums: List[float] = field(default_factory=list)
    closed_sums: List[float] = field(default_factory=list)
    suggested_t_open: float = 0.0
    suggested_t_closed: float = 0.0


# -- rotations -------------------------------------------------------------------

def rotation_from_vectors(a: ArrayLike, b_hat: ArrayLike) -> ArrayLike:
    """(K, 3, 3) matrices [b, a×b, a] with b = (a×b̂)×a; differentiable, no degeneracy checks."""
    a_n = ad.normalize(a, axis=-1)
    b = ad.normalize(ad.cross(ad.cross(a_n, b_hat), a_n), axis=-1)
    return ad.stack([b, ad.cross(a_n, b), a_n], axis=-1)


def assemble_rotation(a: Sequence[float], b_hat: Sequence[float], eps: float = VECTOR_EPS) -> np.ndarray:
    """Single rotation from the decoder's raw vectors; rejects zero or parallel inputs."""
    a = np.asarray(a, dtype=np.float64)
    b_hat = np.asarray(b_hat, dtype=np.float64)
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b_hat)
    if norm_a < eps or norm_b < eps:
        raise DegenerateInputError("approach and closing vectors must be non-zero")
    if np.linalg.norm(np.cross(a, b_hat)) < eps * norm_a * norm_b:
        raise DegenerateInputError("approach and closing vectors are parallel")
    return rotation_from_vectors(a[None], b_hat[None])[0]


def assemble_rotations(a: np.ndarray, b_hat: np.ndarray, eps: float = VECTOR_EPS) -> np.ndarray:
    """Batched assembly; degenerate rows get a fallback b̂ along the axis least aligned with a."""
    a = np.asarray(a, dtype=np.float64).copy()
    b_hat = np.asarray(b_hat, dtype=np.float64).copy()
    tiny = np.linalg.norm(a, axis=-1) < eps
    a[tiny] = (0.0, 0.0, 1.0)
    a_unit = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b_unit = b_hat / np.maximum(np.linalg.norm(b_hat, axis=-1, keepdims=True), eps)
    parallel = np.linalg.norm(np.cross(a_unit, b_unit), axis=-1) < eps
    if np.any(parallel):
        axes = np.eye(3)[np.argmin(np.abs(a_unit[parallel]), axis=-1)]
        b_hat[parallel] = axes
    return rotation_from_vectors(a, b_hat)


# -- proposal ----------------------------------------------------------------------

def grid_points(half_extents: np.ndarray, res: int) -> np.ndarray:
    """(res³, 3) cell centres spanning the box, x slowest, z fastest."""
    if res < 2:
        raise SceneValidationError(f"grid resolution must be >= 2, got {res}")
    half_extents = np.asarray(half_extents, dtype=np.float64)
    axes = [(-h + (np.arange(res) + 0.5) * (2.0 * h / res)) for h in half_extents]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=-1)


def top_k_order(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, descending, ties by ascending index."""
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:k]


def propose(obj: ObjectInstance, field: GraspField, res: int, top_k: int, column: int = 0,
            threads: int = 1) -> List[GraspProposal]:
    """Top-K grid proposals inside the object's volume, in object coordinates."""
    if top_k < 1:
        raise SceneValidationError(f"top_k must be >= 1, got {top_k}")
    points = grid_points(obj.volume.half_extents, res)

    def query(start: int, stop: int):
        score, a, b_hat = field.grasp(points[start:stop], np.full(stop - start, column, dtype=np.int64))
        return ad.value_of(score), ad.value_of(a), ad.value_of(b_hat)

    parts = map_chunks(query, len(points), threads=threads)
    scores = np.concatenate([p[0] for p in parts])
    a = np.concatenate([p[1] for p in parts])
    b_hat = np.concatenate([p[2] for p in parts])

    keep = top_k_order(scores, top_k)
    rotations = assemble_rotations(a[keep], b_hat[keep])
    return [GraspProposal(points[i], rotations[j], float(scores[i]), int(i)) for j, i in enumerate(keep)]


# -- filtering ---------------------------------------------------------------------

def scene_density(points_world: np.ndarray, scene: Scene, field: RadianceField,
                  ground: Optional[GroundPlane] = None) -> np.ndarray:
    """Density summed over every object whose volume contains each point (plus ground)."""
    points_world = np.asarray(points_world, dtype=np.float64)
    flat = points_world.reshape(-1, 3)
    total = np.zeros(len(flat))
    for column, obj in enumerate(scene.objects):
        p_obj = obj.pose.to_local(flat)
        inside = np.flatnonzero(obj.volume.contains(p_obj))
        if inside.size:
            sigma = ad.value_of(field.density(p_obj[inside], np.full(inside.size, column, dtype=np.int64)))
            total[inside] += sigma
    if ground is not None:
        total += ground.density(flat)
    return total.reshape(points_world.shape[:-1])


def evaluate_grasps(proposals: Sequence[GraspProposal], object_pose, scene: Scene, gripper: GripperModel,
                    field: RadianceField, t_open: float, t_closed: float,
                    ground: Optional[GroundPlane] = None) -> List[GraspEvaluation]:
    """Open and closed cloud density sums for each proposal and the threshold verdicts.

    A proposal passes iff open_sum < t_open and closed_sum > t_closed; both
    thresholds must be positive.
    """
    if t_open <= 0.0 or t_closed <= 0.0:
        raise SceneValidationError("t_open and t_closed must be positive")
    if not proposals:
        return []
    positions = np.stack([object_pose.to_world(p.position) for p in proposals])
    rotations = np.stack([object_pose.rotation @ p.rotation for p in proposals])
    open_sums = scene_density(gripper.transformed(gripper.open_cloud, positions, rotations),
                              scene, field, ground).sum(axis=-1)
    closed_sums = scene_density(gripper.transformed(gripper.closed_cloud, positions, rotations),
                                scene, field, ground).sum(axis=-1)
    return [
        GraspEvaluation(p, float(o), float(c), bool(o < t_open), bool(c > t_closed))
        for p, o, c in zip(proposals, open_sums, closed_sums)
    ]


def filter_grasps(proposals: Sequence[GraspProposal], object_pose, scene: Scene, gripper: GripperModel,
                  field: RadianceField, t_open: float, t_closed: float,
                  ground: Optional[GroundPlane] = None) -> List[GraspProposal]:
    """Proposals passing both gripper tests, order preserved."""
    evaluations = evaluate_grasps(proposals, object_pose, scene, gripper, field, t_open, t_closed, ground)
    return [e.proposal for e in evaluations if e.passed]


def calibrate_thresholds(evaluations: Sequence[GraspEvaluation], accepted: Sequence[bool],
                         margin: float = 1.5) -> ThresholdReport:
    """Suggest T_open/T_closed from grasps a stability oracle accepted."""
    chosen = [e for e, ok in zip(evaluations, accepted) if ok]
    if not chosen:
        raise SceneValidationError("no accepted grasps to calibrate on")
    open_sums = [e.open_sum for e in chosen]
    closed_sums = [e.closed_sum for e in chosen]
    return ThresholdReport(
        open_sums=open_sums,
        closed_sums=closed_sums,
        suggested_t_open=float(max(np.percentile(open_sums, 95) * margin, 1e-6)),
        suggested_t_closed=float(max(np.percentile(closed_sums, 5) / margin, 1e-6)),
    )


# -- files -------------------------------------------------------------------------

GRASP_HEADER = "# px py pz r00 r01 r02 r10 r11 r12 r20 r21 r22 score open_ok closed_ok passed"


def format_grasps(evaluations: Sequence[GraspEvaluation]) -> str:
    lines = [GRASP_HEADER]
    for e in evaluations:
        p = e.proposal
        values = [*p.position, *p.rotation.reshape(-1), p.score]
        flags = [int(e.open_ok), int(e.closed_ok), int(e.passed)]
        lines.append(" ".join(f"{v:.9g}" for v in values) + " " + " ".join(str(f) for f in flags))
    return "\n".join(lines) + "\n"


def parse_grasps(text: str) -> List[GraspEvaluation]:
    evaluations = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 16:
            raise DatasetFormatError(f"grasp line {lineno}: expected 16 fields, got {len(fields)}")
        values = [float(v) for v in fields[:13]]
        proposal = GraspProposal(np.array(values[:3]), np.array(values[3:12]).reshape(3, 3), values[12])
        open_ok, closed_ok = bool(int(fields[13])), bool(int(fields[14]))
        evaluations.append(GraspEvaluation(proposal, float("nan"), float("nan"), open_ok, closed_ok))
    return evaluations


class GraspFileInterface(FileInterface):
    """One grasp per line: position, row-major rotation, score, pass/fail flags."""

    def read(self, path) -> InterfaceResult:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        return InterfaceResult(success=True, data=parse_grasps(text), bytes_transferred=len(text))

    def write(self, path, data: Any) -> InterfaceResult:
        with open(ensure_parent(path), "w", encoding="utf-8") as fh:
            fh.write(format_grasps(data))
        return InterfaceResult(success=True, data={"path": str(path), "count": len(data)},
                               bytes_transferred=file_size(path))


class GripperCloudInterface(FileInterface):
    """Gripper clouds as text: a width line, then open and closed point blocks."""

    def read(self, path) -> InterfaceResult:
        rows = np.loadtxt(path, comments="#", ndmin=2)
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
        if not header.startswith("# width"):
            raise DatasetFormatError(f"{path}: missing width header")
        if rows.shape != (2 * CLOUD_POINTS, 3):
            raise DatasetFormatError(f"{path}: expected {2 * CLOUD_POINTS} points, got {rows.shape[0]}")
        width = float(header.split()[2])
        model = GripperModel(rows[:CLOUD_POINTS], rows[CLOUD_POINTS:], width)
        return InterfaceResult(success=True, data=model, bytes_transferred=file_size(path))

    def write(self, path, data: Any) -> InterfaceResult:
        with open(ensure_parent(path), "w", encoding="utf-8") as fh:
            fh.write(f"# width {data.width:.6f}\n# open cloud then closed cloud, meters, gripper frame\n")
            np.savetxt(fh, np.concatenate([data.open_cloud, data.closed_cloud]), fmt="%.9f")
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


class GraspEngineNode(LeafNode):
    """
    M221 - Grasp Engine Leaf Node

    Responsibility: grasp proposal, assembly and gripper-density filtering
    External Interface: grasp files (.txt), gripper cloud files
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M221",
            name="Grasp Engine",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M220",
            metadata={"interface": "grasp_file", "file_types": [".txt"]},
        )
        super().__init__(config)
        self._interface_type = "grasp_file"
        self._grasp_file = GraspFileInterface()
        self._cloud_file = GripperCloudInterface()
        self.defaults = GraspConfig.defaults()

    def gripper(self, width: float, asset: Optional[Path] = None, seed: int = 0) -> GripperModel:
        """Gripper from a cloud asset when given, otherwise the procedural preset."""
        if asset is not None and self._cloud_file.exists(asset):
            return self._cloud_file.read(asset).data
        return GripperModel.preset(width, seed)

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "propose" | "evaluate" | "pipeline" | "write" | "read"
                      | "write_gripper" | "read_gripper",
            "object": ObjectInstance, "scene": Scene, "field": neural field,
            "column": object column in the scene, "config": GraspConfig fields,
            "proposals": [...], "path": str
        }
        """
        action = input_data.get("action", "pipeline")
        try:
            if action in ("propose", "evaluate", "pipeline"):
                cfg = self.defaults if input_data.get("config") is None else \
                    GraspConfig.from_dict({**self.defaults.to_dict(), **input_data["config"]})
                data = self._grasp(action, input_data, cfg)
            elif action == "write":
                result = self._grasp_file.write(input_data["path"], input_data["evaluations"])
                data = result.data
            elif action == "read":
                data = self._grasp_file.read(input_data["path"]).data
            elif action == "write_gripper":
                data = self._cloud_file.write(input_data["path"], input_data["gripper"]).data
            elif action == "read_gripper":
                data = self._cloud_file.read(input_data["path"]).data
            else:
                return self.unknown_action(action)
            return NodeResult(success=True, data=data, node_id=self.node_id)
        except Exception as exc:
            logger.error("grasp %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def _grasp(self, action: str, input_data: Dict[str, Any], cfg: GraspConfig):
        obj: ObjectInstance = input_data["object"]
        field = input_data["field"]
        column = int(input_data.get("column", 0))
        if action == "propose":
            return propose(obj, field, cfg.res, cfg.top_k, column, self.threads)
        proposals = input_data.get("proposals")
        if proposals is None:
            proposals = propose(obj, field, cfg.res, cfg.top_k, column, self.threads)
        scene = input_data.get("scene")
        if scene is None:
            scene = Scene((obj,))
        gripper = input_data.get("gripper")
        if gripper is None:
            gripper = self.gripper(cfg.gripper_width, input_data.get("gripper_asset"), cfg.gripper_seed)
        ground = GroundPlane(cfg.ground_height, cfg.ground_sigma) if cfg.ground else None
        evaluations = evaluate_grasps(proposals, obj.pose, scene, gripper, field, cfg.t_open, cfg.t_closed, ground)
        logger.info("object %d: %d proposals, %d pass filtering", obj.id, len(evaluations),
                    sum(e.passed for e in evaluations))
        return evaluations


# Factory function
def create_node() -> GraspEngineNode:
    """Create and return M221 node instance."""
    return GraspEngineNode()
