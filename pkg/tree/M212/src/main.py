"""
M212 - Dataset Kit
Leaf Node: analytic scene generation, dataset files and image metrics

Generates desk-scale datasets of procedural objects rendered by a brute-force
reference renderer, labels grasps with a stability oracle, and owns every
dataset-side file format (PNG, depth raster, layout, latents, manifests).
External Interface: dataset directories, PNG images, depth rasters, YAML files.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    BoundingVolume, Camera, LatentCode, LeafNode, NodeConfig, NodeLevel, NodeResult, NodeType, ObjectInstance,
    Pose, Scene, SceneValidationError,
)
from shared.interfaces import ensure_parent
from shared.utils import get_logger, map_chunks
from tree.M212.src.grasping import sample_annotations, score_grasp
from tree.M212.src.metrics import psnr, ssim
from tree.M212.src.oracle import oracle_render
from tree.M212.src.records import DatasetConfig, SceneDataset, SceneRecord, View, object_counts
from tree.M212.src.shapes import AnalyticObject, random_object
from tree.M212.src.storage import (
    DatasetInterface, DepthRasterInterface, LatentInterface, LayoutInterface, PngInterface, format_cameras,
    parse_cameras, write_yaml,
)
from tree.M221.src.gripper import GripperModel

logger = get_logger("M212")

FALLING_AREA_RADIUS = 0.15
PLACEMENT_ATTEMPTS = 1000
HEMISPHERE_MIN_ELEVATION = 0.15


def view_directions(rng: np.random.Generator, count: int, hemisphere: bool = False) -> np.ndarray:
    """Uniform unit directions on the sphere, or on the upper hemisphere above a small elevation."""
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    if hemisphere:
        dirs[:, 2] = np.maximum(np.abs(dirs[:, 2]), HEMISPHERE_MIN_ELEVATION)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs


def make_cameras(rng: np.random.Generator, count: int, width: int, height: int, distance: float,
                 fov_deg: float, hemisphere: bool = False) -> List[Camera]:
    """Cameras at a fixed distance from the origin, all looking at it."""
    return [Camera.look_at(distance * d, width, height, fov_deg)
            for d in view_directions(rng, count, hemisphere)]


def place_on_ground(rng: np.random.Generator, objects: List[AnalyticObject]) -> List[Pose]:
    """Random yaw poses resting on z = 0 whose xy bounding circles do not overlap."""
    poses: List[Pose] = []
    circles: List[tuple] = []
    for obj in objects:
        radius = float(np.linalg.norm(obj.half_extents[:2]))
        for _ in range(PLACEMENT_ATTEMPTS):
            xy = rng.uniform(-FALLING_AREA_RADIUS, FALLING_AREA_RADIUS, size=2)
            if all(np.linalg.norm(xy - c) > radius + r for c, r in circles):
                break
        else:
            raise SceneValidationError(f"could not place {len(objects)} objects without overlap")
        circles.append((xy, radius))
        translation = (xy[0], xy[1], obj.support_half_extents[2])
        poses.append(Pose.from_yaw(rng.uniform(0.0, 2.0 * np.pi), translation))
    return poses


def generate_record(index: int, first_id: int, count: int, split: str, cfg: DatasetConfig,
                    gripper: GripperModel) -> SceneRecord:
    """One scene, seeded with cfg.seed + index."""
    rng = np.random.default_rng(cfg.seed + index)
    objects = [random_object(rng, cfg.shapes) for _ in range(count)]
    falling = cfg.layout == "falling"
    poses = place_on_ground(rng, objects) if falling else [Pose.identity()] * count
    instances = tuple(ObjectInstance(first_id + k, pose, BoundingVolume(obj.half_extents), LatentCode.zeros(1))
                      for k, (obj, pose) in enumerate(zip(objects, poses)))
    scene = Scene(instances, np.asarray(cfg.background))
    record = SceneRecord(f"scene_{index:03d}", split, scene, objects)

    fov = cfg.falling_fov_deg if falling else cfg.fov_deg
    field = record.analytic_field()
    for camera in make_cameras(rng, cfg.num_views, cfg.width, cfg.height, cfg.camera_distance, fov, falling):
        record.views.append(View(camera, oracle_render(scene, camera, field, cfg.oracle_samples).rgb))
    for inst, obj in zip(instances, objects):
        record.grasps.extend(sample_annotations(obj, inst.id, gripper, cfg.num_grasps, rng, cfg.grasp_trials))
    logger.debug("generated %s: %d objects, %d views, %d grasps", record.name, count, len(record.views),
                 len(record.grasps))
    return record


def generate_dataset(cfg: DatasetConfig, threads: int = 1) -> SceneDataset:
    """Train scenes first, then test scenes; object ids are dense across both."""
    plan_rng = np.random.default_rng(cfg.seed)
    plan = []
    for split, total in (("train", cfg.num_objects), ("test", cfg.num_test_objects)):
        if cfg.layout == "single":
            sizes = [1] * total
        else:
            sizes = object_counts(total, plan_rng, cfg.min_objects, cfg.max_objects)
        plan.extend((split, n) for n in sizes)
    first_ids = np.concatenate([[0], np.cumsum([n for _, n in plan])]).astype(int)
    gripper = GripperModel.preset(cfg.gripper_width)

    def build(start: int, stop: int):
        return [generate_record(i, int(first_ids[i]), plan[i][1], plan[i][0], cfg, gripper)
                for i in range(start, stop)]

    records = [r for chunk in map_chunks(build, len(plan), threads=threads, chunk_size=1) for r in chunk]
    logger.info("generated %d scenes with %d objects", len(records), int(first_ids[-1]))
    return SceneDataset(records, cfg)


class DatasetKitNode(LeafNode):
    """
    M212 - Dataset Kit Leaf Node

    Responsibility: dataset generation, grasp labelling, image metrics
    External Interface: dataset directories, PNG, depth rasters, YAML
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M212",
            name="Dataset Kit",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M210",
            metadata={"interface": "dataset_files", "file_types": [".png", ".nsdr", ".yaml", ".txt"]},
        )
        super().__init__(config)
        self._interface_type = "dataset_files"
        self._dataset = DatasetInterface()
        self._png = PngInterface()
        self._depth = DepthRasterInterface()
        self._latent = LatentInterface()

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "generate" | "write_dataset" | "read_dataset" | "write_png" | "read_png"
                      | "write_depth" | "read_depth" | "write_layout" | "read_layout"
                      | "write_latent" | "read_latent" | "write_cameras" | "read_cameras" | "write_yaml"
                      | "metrics" | "score_grasp" | "oracle_render",
            "config": DatasetConfig fields, "dataset": SceneDataset, "path": str,
            "image": (H, W, 3), "depth": (H, W), "valid": (H, W), "scene": Scene,
            "a"/"b": images for metrics
        }
        """
        action = input_data.get("action", "generate")
        path = input_data.get("path")
        try:
            if action == "generate":
                cfg = input_data.get("config")
                if not isinstance(cfg, DatasetConfig):
                    cfg = DatasetConfig.from_dict({**DatasetConfig.defaults().to_dict(), **(cfg or {})})
                data = generate_dataset(cfg, self.threads)
            elif action == "write_dataset":
                data = self._dataset.write(path, input_data["dataset"]).data
            elif action == "read_dataset":
                data = self._dataset.read(path).data
            elif action == "write_png":
                data = self._png.write(path, input_data["image"]).data
            elif action == "read_png":
                data = self._png.read(path).data
            elif action == "write_depth":
                data = self._depth.write(path, (input_data["depth"], input_data["valid"])).data
            elif action == "read_depth":
                data = self._depth.read(path).data
            elif action == "write_layout":
                payload = (input_data["scene"], input_data.get("latent_files"))
                data = LayoutInterface().write(path, payload).data
            elif action == "read_layout":
                data = LayoutInterface(int(input_data.get("latent_dim", 1))).read(path).data
            elif action == "write_latent":
                data = self._latent.write(path, input_data["latent"]).data
            elif action == "read_latent":
                data = self._latent.read(path).data
            elif action == "write_cameras":
                ensure_parent(path).write_text(format_cameras(input_data["cameras"]), encoding="utf-8")
                data = {"path": str(path), "count": len(input_data["cameras"])}
            elif action == "read_cameras":
                data = parse_cameras(Path(path).read_text(encoding="utf-8"))
            elif action == "write_yaml":
                data = {"path": str(path), "bytes": write_yaml(path, input_data["data"])}
            elif action == "metrics":
                data = self.metrics(input_data["a"], input_data["b"])
            elif action == "score_grasp":
                data = score_grasp(input_data["object"], input_data["position"], input_data["rotation"],
                                   input_data["gripper"], int(input_data.get("trials", 50)),
                                   np.random.default_rng(input_data.get("seed")), input_data.get("oracle"))
            elif action == "oracle_render":
                field = input_data.get("field") or input_data["record"].analytic_field()
                data = oracle_render(input_data["scene"], input_data["camera"], field,
                                     int(input_data.get("num_samples", 256)))
            else:
                return self.unknown_action(action)
            return NodeResult(success=True, data=data, node_id=self.node_id)
        except Exception as exc:
            logger.error("dataset %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def metrics(self, a: np.ndarray, b: np.ndarray) -> Dict[str, Any]:
        """PSNR (with exact-match flag) and SSIM of two images."""
        value = psnr(a, b)
        return {"psnr": value, "exact_match": bool(np.isinf(value)), "ssim": ssim(a, b)}

    def generate(self, config: Optional[Dict[str, Any]] = None) -> SceneDataset:
        result = self.process({"action": "generate", "config": config})
        if not result.success:
            raise SceneValidationError(result.error)
        return result.data

    def read_image(self, path) -> np.ndarray:
        return self._png.read(path).data

    def write_image(self, path, image: np.ndarray) -> bool:
        return self.process({"action": "write_png", "path": path, "image": image}).success


# Factory function
def create_node() -> DatasetKitNode:
    """Create and return M212 node instance."""
    return DatasetKitNode()
