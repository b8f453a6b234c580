"""
M120 - Network Handler
Level 2 Internal Node: decoder coordination

Children:
- M121 (Decoder Networks) - Left child
- M122 (Checkpoint Store) - Right child

Responsibility: create, load and save checkpoints and bind them to scenes.
"""
from pathlib import Path
from typing import Any, Dict, Optional

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import InternalNode, NodeConfig, NodeLevel, NodeResult, NodeType, Scene
from shared.utils import get_logger

from tree.M121.src.main import Checkpoint, NeuralField, create_node as create_m121
from tree.M122.src.main import create_node as create_m122

logger = get_logger("M120")


def scene_field(checkpoint: Checkpoint, scene: Scene) -> NeuralField:
    """Neural field over the scene's objects, using the latents stored in the scene."""
    return NeuralField.from_checkpoint(checkpoint, scene.latent_matrix(checkpoint.config.latent_dim))


class NetworkHandlerNode(InternalNode):
    """
    M120 - Network Handler Internal Node

    Responsibility: route decoder and checkpoint requests
    Children: M121 (Decoder Networks), M122 (Checkpoint Store)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M120",
            name="Network Handler",
            level=NodeLevel.LEVEL_2,
            node_type=NodeType.HANDLER,
            parent_id="M100",
            left_child_id="M121",
            right_child_id="M122",
            metadata={"role": "network_management"},
        )
        super().__init__(config)
        self._checkpoint: Optional[Checkpoint] = None
        self._init_children()

    def _init_children(self):
        """Initialize child nodes."""
        self._adopt(create_m121(), create_m122())

    @property
    def checkpoint(self) -> Optional[Checkpoint]:
        return self._checkpoint

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "init" | "param_count" | "radiance" | "grasp" | "save" | "load" | "bind",
            "path": str, "checkpoint": Checkpoint, "scene": Scene, ...
        }
        """
        action = input_data.get("action", "param_count")
        try:
            if action in ("init", "param_count", "radiance", "grasp"):
                result = self.forward(self.left, input_data)
                if action == "init" and result.success:
                    self._checkpoint = result.data
                return result
            if action in ("save", "load"):
                result = self.forward(self.right, input_data)
                if action == "load" and result.success:
                    self._checkpoint = result.data
                return result
            if action == "bind":
                checkpoint = input_data.get("checkpoint") or self._checkpoint
                if checkpoint is None:
                    return NodeResult(success=False, error="no checkpoint loaded", error_kind="validation",
                                      node_id=self.node_id)
                return NodeResult(success=True, data=scene_field(checkpoint, input_data["scene"]),
                                  node_id=self.node_id)
            return self.unknown_action(action)
        except Exception as exc:
            logger.error("network %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def load(self, path) -> Checkpoint:
        """Convenience method: load and remember a checkpoint."""
        self._checkpoint = self.right.load(path)
        return self._checkpoint

    def parameter_report(self, decoder: Optional[Dict[str, Any]] = None) -> Dict[str, int]:
        result = self.process({"action": "param_count", "decoder": decoder})
        return result.data if result.success else {}


# Factory function
def create_node() -> NetworkHandlerNode:
    """Create and return M120 node instance."""
    return NetworkHandlerNode()
