"""
M000 - Scene Orchestrator
Level 0 Root Node: end-to-end workflows

Children:
- M100 (Representation Manager) - Left child
- M200 (Application Manager) - Right child

Responsibility: run the command-level workflows (dataset generation,
pre-training, inversion, rendering, grasping, voxelization, evaluation and
benchmarking) by chaining requests through both subtrees. Every output is
written once under an output directory by the leaf that owns its format.
"""
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    BoundingVolume, BSTNode, Camera, InternalNode, LatentCode, NeuralSceneError, NodeConfig, NodeLevel, NodeResult,
    NodeType, ObjectInstance, Pose, Scene, SceneValidationError,
)
from shared.utils import get_logger

from tree.M100.src.main import create_node as create_m100
from tree.M121.src.main import Checkpoint
from tree.M200.src.main import create_node as create_m200
from tree.M211.src.losses import psnr_from_mse

logger = get_logger("M000")

WORKFLOWS = (
    "gen_data", "pretrain", "invert", "render", "render_depth", "render_graspfield", "grasp", "voxelize",
    "evaluate", "bench",
)
CHECKPOINT_FILE = "model.ckpt"
BENCH_HALF_EXTENT = 0.1
BENCH_LATENT_STD = 0.1


@dataclass
class WorkflowRecord:
    """One finished workflow and the files it produced."""
    name: str
    outputs: List[str] = field(default_factory=list)
    seconds: float = 0.0
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))


def table_latents(scene: Scene, checkpoint: Checkpoint) -> Scene:
    """Give every object the latent stored in the checkpoint table row of its id."""
    return scene.with_latents({obj.id: LatentCode(checkpoint.latent(obj.id)) for obj in scene.objects})


def bench_latent(checkpoint: Checkpoint, seed: int) -> np.ndarray:
    """A seeded pick from the latent table, or a seeded draw when the table is empty."""
    rng = np.random.default_rng(seed)
    if checkpoint.num_latents == 0:
        return rng.normal(0.0, BENCH_LATENT_STD, checkpoint.config.latent_dim)
    return checkpoint.latent(int(rng.integers(checkpoint.num_latents)))


def bench_scene(latent: np.ndarray) -> Scene:
    volume = BoundingVolume(np.full(3, BENCH_HALF_EXTENT))
    return Scene((ObjectInstance(0, Pose.identity(), volume, LatentCode(latent)),))


class SceneOrchestratorNode(InternalNode):
    """
    M000 - Scene Orchestrator Node

    Responsibility: command-level workflows over the whole tree
    Children: M100 (Representation Manager), M200 (Application Manager)
    """

    def __init__(self, threads: int = 1):
        config = NodeConfig(
            node_id="M000",
            name="Scene Orchestrator",
            level=NodeLevel.ROOT,
            node_type=NodeType.ORCHESTRATOR,
            parent_id=None,
            left_child_id="M100",
            right_child_id="M200",
            metadata={"role": "root_orchestration", "tree_levels": 4, "total_nodes": 15},
        )
        super().__init__(config)
        self._workflow_history: List[WorkflowRecord] = []
        self._init_children()
        if threads != 1:
            self.set_threads(threads)

    def _init_children(self):
        """Initialize child nodes."""
        self._adopt(create_m100(), create_m200())

    @property
    def history(self) -> List[WorkflowRecord]:
        return list(self._workflow_history)

    # -- tree helpers -----------------------------------------------------------------

    def _collect_all_leaves(self, node: Optional[BSTNode] = None) -> List[BSTNode]:
        node = self if node is None else node
        if node.is_leaf:
            return [node]
        return [leaf for child in (node.left, node.right) if child is not None
                for leaf in self._collect_all_leaves(child)]

    def _get_node_by_path(self, path: str) -> Optional[BSTNode]:
        """Node at a dotted path such as "M100.M120.M122"."""
        current: Optional[BSTNode] = self
        for part in path.split("."):
            if part == self.node_id:
                continue
            children = [c for c in (current.left, current.right) if c is not None and c.node_id == part]
            if not children:
                return None
            current = children[0]
        return current

    @staticmethod
    def _call(node: BSTNode, request: Dict[str, Any]) -> Any:
        """Send a request and unwrap the result, re-raising failures with their kind."""
        result = node.process(request)
        if not result.success:
            kind = SceneValidationError if result.error_kind == "validation" else NeuralSceneError
            raise kind(f"{request.get('action')}: {result.error}")
        return result.data

    @staticmethod
    def _claim(path: Path) -> Path:
        """Outputs are write-once."""
        if path.exists():
            raise SceneValidationError(f"refusing to overwrite {path}")
        return path

    # -- request entry point ------------------------------------------------------------

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": one of WORKFLOWS | "route_request" | "status",
            "params": keyword arguments of the workflow method,
            "target": dotted node path, "request": {...}       # route_request
        }
        """
        action = input_data.get("action", "status")
        try:
            if action in WORKFLOWS:
                data = self.run_workflow(action, **(input_data.get("params") or {}))
            elif action == "route_request":
                node = self._get_node_by_path(input_data.get("target", ""))
                if node is None:
                    raise SceneValidationError(f"unknown target: {input_data.get('target')}")
                return self.forward(node, input_data.get("request", {}))
            elif action == "status":
                data = {
                    "leaf_nodes": {leaf.node_id: leaf.get_status() for leaf in self._collect_all_leaves()},
                    "threads": self.threads,
                    "workflow_count": len(self._workflow_history),
                }
            else:
                return self.unknown_action(action)
            return NodeResult(success=True, data=data, node_id=self.node_id)
        except Exception as exc:
            logger.error("workflow %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def run_workflow(self, name: str, **params) -> Dict[str, Any]:
        if name not in WORKFLOWS:
            raise SceneValidationError(f"unknown workflow: {name}")
        workflow: Callable[..., Dict[str, Any]] = getattr(self, name)
        start = time.perf_counter()
        data = workflow(**params)
        record = WorkflowRecord(name, [str(p) for p in data.get("outputs", [])], time.perf_counter() - start)
        self._workflow_history.append(record)
        logger.info("%s finished in %.2f s", name, record.seconds)
        return data

    # -- shared steps ---------------------------------------------------------------------

    def load_checkpoint(self, path) -> Checkpoint:
        return self._call(self.left, {"action": "load_checkpoint", "path": path})

    def read_layout(self, path, checkpoint: Checkpoint, use_table: bool = False) -> Scene:
        scene = self._call(self.right, {"action": "read_layout", "path": path,
                                        "latent_dim": checkpoint.config.latent_dim})
        return table_latents(scene, checkpoint) if use_table else scene

    def camera_from_file(self, path, view: int = 0) -> Camera:
        cameras = self._call(self.right, {"action": "read_cameras", "path": path})
        if not 0 <= view < len(cameras):
            raise SceneValidationError(f"view {view} outside the {len(cameras)} cameras in {path}")
        return cameras[view]

    def write_manifest(self, out, manifest: Dict[str, Any]) -> Path:
        path = self._claim(Path(out) / "manifest.yaml")
        self._call(self.right, {"action": "write_yaml", "path": path, "data": manifest})
        return path

    def _render(self, kind: str, scene: Scene, camera: Camera, checkpoint: Checkpoint,
                num_samples: Optional[int]):
        action = "render_grasp_field" if kind == "graspfield" else "render"
        return self._call(self.left, {"action": action, "scene": scene, "camera": camera,
                                      "checkpoint": checkpoint, "num_samples": num_samples})

    # -- workflows --------------------------------------------------------------------------

    def gen_data(self, out, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Generate an analytic dataset and write it to <out>/dataset."""
        target = self._claim(Path(out) / "dataset")
        dataset = self._call(self.right, {"action": "generate", "config": config})
        self._call(self.right, {"action": "write_dataset", "path": target, "dataset": dataset})
        return {"outputs": [target], "scenes": len(dataset), "objects": dataset.num_objects}

    def pretrain(self, out, dataset, config: Optional[Dict[str, Any]] = None,
                 decoder: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Pre-train decoders and the latent table; writes the checkpoint and the training log."""
        out = Path(out)
        ckpt_path = self._claim(out / CHECKPOINT_FILE)
        log_path = self._claim(out / "train.log")
        checkpoint = self._call(self.right, {"action": "pretrain", "dataset_path": dataset, "config": config,
                                             "decoder": decoder, "log_path": log_path})
        self._call(self.left, {"action": "save_checkpoint", "path": ckpt_path, "checkpoint": checkpoint})
        return {"outputs": [ckpt_path, log_path], "num_latents": checkpoint.num_latents,
                "steps": checkpoint.extra.get("steps", 0)}

    def invert(self, out, checkpoint, image, layout, camera: Camera, mode: str = "latent_only",
               config: Optional[Dict[str, Any]] = None, num_samples: Optional[int] = None) -> Dict[str, Any]:
        """Fit latents (and optionally decoders) to one image; writes latents, layout, re-render."""
        out = Path(out)
        ckpt = self.load_checkpoint(checkpoint)
        scene = self.read_layout(layout, ckpt)
        target = self._call(self.right, {"action": "read_png", "path": image})
        log_path = self._claim(out / "invert.log")
        result = self._call(self.right, {"action": "finetune", "image": target, "camera": camera, "layout": scene,
                                         "mode": mode, "checkpoint": ckpt, "config": config,
                                         "log_path": log_path})
        outputs: List[Path] = [log_path]
        latent_files: Dict[int, str] = {}
        for object_id, latent in sorted(result.latents.items()):
            name = f"latents/object_{object_id:04d}.txt"
            self._call(self.right, {"action": "write_latent", "path": self._claim(out / name), "latent": latent})
            latent_files[object_id] = name
            outputs.append(out / name)
        inverted = result.scene(scene)
        layout_path = self._claim(out / "layout.yaml")
        self._call(self.right, {"action": "write_layout", "path": layout_path, "scene": inverted,
                                "latent_files": latent_files})
        outputs.append(layout_path)
        if result.checkpoint is not ckpt:
            ckpt_path = self._claim(out / CHECKPOINT_FILE)
            self._call(self.left, {"action": "save_checkpoint", "path": ckpt_path, "checkpoint": result.checkpoint})
            outputs.append(ckpt_path)
        rendered = self._render("rgb", inverted, camera, result.checkpoint, num_samples)
        render_path = self._claim(out / "render.png")
        self._call(self.right, {"action": "write_png", "path": render_path, "image": rendered.rgb})
        outputs.append(render_path)
        return {"outputs": outputs, "best_psnr": psnr_from_mse(result.best_loss), "best_epoch": result.best_epoch,
                "epochs": len(result.epoch_losses)}

    def render(self, out, checkpoint, layout, camera: Camera, num_samples: Optional[int] = None,
               use_table: bool = False) -> Dict[str, Any]:
        """RGB render of a layout to <out>/render.png."""
        ckpt = self.load_checkpoint(checkpoint)
        image = self._render("rgb", self.read_layout(layout, ckpt, use_table), camera, ckpt, num_samples)
        path = self._claim(Path(out) / "render.png")
        self._call(self.right, {"action": "write_png", "path": path, "image": image.rgb})
        return {"outputs": [path], "coverage": float(image.alpha.mean())}

    def render_depth(self, out, checkpoint, layout, camera: Camera, num_samples: Optional[int] = None,
                     use_table: bool = False) -> Dict[str, Any]:
        """Expected-depth raster with validity mask to <out>/depth.nsdr."""
        ckpt = self.load_checkpoint(checkpoint)
        image = self._render("rgb", self.read_layout(layout, ckpt, use_table), camera, ckpt, num_samples)
        path = self._claim(Path(out) / "depth.nsdr")
        self._call(self.right, {"action": "write_depth", "path": path, "depth": image.depth, "valid": image.valid})
        return {"outputs": [path], "valid_fraction": float(np.mean(image.valid))}

    def render_graspfield(self, out, checkpoint, layout, camera: Camera, num_samples: Optional[int] = None,
                          use_table: bool = False) -> Dict[str, Any]:
        """Grasp-score colour-mapped render to <out>/graspfield.png."""
        ckpt = self.load_checkpoint(checkpoint)
        image = self._render("graspfield", self.read_layout(layout, ckpt, use_table), camera, ckpt, num_samples)
        path = self._claim(Path(out) / "graspfield.png")
        self._call(self.right, {"action": "write_png", "path": path, "image": image.rgb})
        return {"outputs": [path]}

    def grasp(self, out, checkpoint, layout, object_ids: Optional[Sequence[int]] = None,
              config: Optional[Dict[str, Any]] = None, use_table: bool = False) -> Dict[str, Any]:
        """Propose and filter grasps per object; one grasp file per object."""
        ckpt = self.load_checkpoint(checkpoint)
        scene = self.read_layout(layout, ckpt, use_table)
        bound = self._call(self.left, {"action": "bind", "scene": scene, "checkpoint": ckpt})
        results = self._call(self.right, {"action": "grasp_scene", "scene": scene, "field": bound,
                                          "object_ids": object_ids, "config": config})
        outputs, summary = [], {}
        for object_id, evaluations in results.items():
            path = self._claim(Path(out) / f"grasps_object_{object_id:04d}.txt")
            self._call(self.right, {"action": "write_grasps", "path": path, "evaluations": evaluations})
            outputs.append(path)
            summary[int(object_id)] = {"proposals": len(evaluations),
                                       "passed": sum(e.passed for e in evaluations)}
        return {"outputs": outputs, "objects": summary}

    def voxelize(self, out, checkpoint, layout, object_id: Optional[int] = None, res: Optional[int] = None,
                 threshold: Optional[float] = None, dense: bool = False,
                 use_table: bool = False) -> Dict[str, Any]:
        """Occupancy grid of one object or of the whole scene."""
        ckpt = self.load_checkpoint(checkpoint)
        scene = self.read_layout(layout, ckpt, use_table)
        bound = self._call(self.left, {"action": "bind", "scene": scene, "checkpoint": ckpt})
        if object_id is None:
            grid = self._call(self.right, {"action": "voxelize_scene", "scene": scene, "field": bound,
                                           "res": res, "threshold": threshold})
            stem = "voxels_scene"
        else:
            column = scene.ids.index(object_id) if object_id in scene.ids else -1
            if column < 0:
                raise SceneValidationError(f"no object with id {object_id} in the layout")
            grid = self._call(self.right, {"action": "voxelize", "object": scene.objects[column], "column": column,
                                           "field": bound, "res": res, "threshold": threshold})
            stem = f"voxels_object_{object_id:04d}"
        path = self._claim(Path(out) / (stem + (".vox" if dense else ".txt")))
        self._call(self.right, {"action": "write_voxels", "path": path, "grid": grid})
        return {"outputs": [path], "res": grid.res, "occupied": int(grid.occupancy.sum()),
                "occupied_fraction": grid.occupied_fraction}

    def evaluate(self, out, image_a, image_b) -> Dict[str, Any]:
        """PSNR and SSIM of two PNG images, written to <out>/metrics.yaml."""
        a = self._call(self.right, {"action": "read_png", "path": image_a})
        b = self._call(self.right, {"action": "read_png", "path": image_b})
        metrics = self._call(self.right, {"action": "metrics", "a": a, "b": b})
        path = self._claim(Path(out) / "metrics.yaml")
        self._call(self.right, {"action": "write_yaml", "path": path, "data": metrics})
        return {"outputs": [path], **metrics}

    def bench(self, out, checkpoint=None, size: int = 128, num_samples: int = 32, repeats: int = 3,
              seed: int = 0) -> Dict[str, Any]:
        """Time full-image renders of a single object; reported, never gated."""
        if repeats < 1:
            raise SceneValidationError("repeats must be >= 1")
        if checkpoint is None:
            ckpt = self._call(self.left, {"action": "init_checkpoint", "num_latents": 1, "seed": seed})
        else:
            ckpt = self.load_checkpoint(checkpoint)
        scene = bench_scene(bench_latent(ckpt, seed))
        camera = Camera.look_at((0.0, -1.0, 0.0), size, size, 15.0)
        timings = []
        for _ in range(repeats):
            start = time.perf_counter()
            self._render("rgb", scene, camera, ckpt, num_samples)
            timings.append(1000.0 * (time.perf_counter() - start))
        report = {"width": size, "height": size, "num_samples": num_samples, "threads": self.threads,
                  "seed": seed, "ms_min": float(min(timings)), "ms_mean": float(np.mean(timings)),
                  "runs_ms": timings}
        path = self._claim(Path(out) / "bench.yaml")
        self._call(self.right, {"action": "write_yaml", "path": path, "data": report})
        logger.info("render %dx%d, %d samples: %.1f ms (best of %d)", size, size, num_samples,
                    report["ms_min"], repeats)
        return {"outputs": [path], **report}


# Factory function
def create_node(threads: int = 1) -> SceneOrchestratorNode:
    """Create and return M000 root node instance."""
    return SceneOrchestratorNode(threads)


# Tree builder utility
def build_tree(threads: int = 1) -> SceneOrchestratorNode:
    """Build and return the complete tree."""
    return create_node(threads)
