"""
M100 - Representation Manager
Level 1 Internal Node: the scene representation

Children:
- M110 (Rendering Handler) - Left child
- M120 (Network Handler) - Right child

Responsibility: bind checkpoints to scene layouts and render them.
"""
from pathlib import Path
from typing import Any, Optional

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import Camera, InternalNode, NodeConfig, NodeLevel, NodeResult, NodeType, Scene
from shared.utils import get_logger

from tree.M110.src.main import RenderedImage, create_node as create_m110
from tree.M120.src.main import create_node as create_m120, scene_field
from tree.M121.src.main import Checkpoint

logger = get_logger("M100")

RENDER_ACTIONS = ("render", "render_depth", "render_grasp_field")


class RepresentationManagerNode(InternalNode):
    """
    M100 - Representation Manager Internal Node

    Responsibility: coordinate rendering with the decoders
    Children: M110 (Rendering Handler), M120 (Network Handler)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M100",
            name="Representation Manager",
            level=NodeLevel.LEVEL_1,
            node_type=NodeType.MANAGER,
            parent_id="M000",
            left_child_id="M110",
            right_child_id="M120",
            metadata={"role": "representation_management"},
        )
        super().__init__(config)
        self._init_children()

    def _init_children(self):
        """Initialize child nodes."""
        self._adopt(create_m110(), create_m120())

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "render" | "render_depth" | "render_grasp_field" | "load_checkpoint"
                      | "save_checkpoint" | "init_checkpoint" | "param_count" | "bind" | "trace" | "march",
            "scene": Scene, "camera": Camera,
            "checkpoint": Checkpoint or "checkpoint_path": str,
            "num_samples": int
        }
        """
        action = input_data.get("action", "render")
        try:
            if action in RENDER_ACTIONS:
                checkpoint = self._resolve_checkpoint(input_data)
                image = self.render(input_data["scene"], input_data["camera"], checkpoint,
                                    input_data.get("num_samples"), grasp=action == "render_grasp_field")
                return NodeResult(success=True, data=image, node_id=self.node_id)
            if action == "load_checkpoint":
                return self.forward(self.right, {"action": "load", "path": input_data["path"]})
            if action == "save_checkpoint":
                return self.forward(self.right, {"action": "save", "path": input_data["path"],
                                                 "checkpoint": input_data["checkpoint"]})
            if action in ("init_checkpoint", "param_count"):
                request = dict(input_data)
                request["action"] = "init" if action == "init_checkpoint" else "param_count"
                return self.forward(self.right, request)
            if action == "bind":
                return self.forward(self.right, {"action": "bind", "scene": input_data["scene"],
                                                 "checkpoint": self._resolve_checkpoint(input_data)})
            if action in ("trace", "march", "dump_table", "dump_samples"):
                return self.forward(self.left, input_data)
            return self.unknown_action(action)
        except Exception as exc:
            logger.error("representation %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def _resolve_checkpoint(self, input_data) -> Checkpoint:
        if input_data.get("checkpoint") is not None:
            return input_data["checkpoint"]
        if input_data.get("checkpoint_path"):
            return self.right.load(input_data["checkpoint_path"])
        if self.right.checkpoint is None:
            raise ValueError("no checkpoint given or loaded")
        return self.right.checkpoint

    def render(self, scene: Scene, camera: Camera, checkpoint: Checkpoint,
               num_samples: Optional[int] = None, grasp: bool = False) -> RenderedImage:
        """Render a layout whose objects carry their latent codes."""
        field = scene_field(checkpoint, scene)
        if grasp:
            return self.left.render_grasp_field(scene, camera, field, field, num_samples)
        return self.left.render(scene, camera, field, num_samples)


# Factory function
def create_node() -> RepresentationManagerNode:
    """Create and return M100 node instance."""
    return RepresentationManagerNode()
