"""
M210 - Learning Handler
Level 2 Internal Node: training and dataset coordination

Children:
- M211 (Trainer) - Left child
- M212 (Dataset Kit) - Right child

Responsibility: route training and inversion requests to the trainer and
dataset, file and metric requests to the dataset kit.
"""
from pathlib import Path
from typing import Any, Dict, Optional

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import InternalNode, NodeConfig, NodeLevel, NodeResult, NodeType
from shared.utils import get_logger

from tree.M211.src.main import create_node as create_m211
from tree.M212.src.main import create_node as create_m212
from tree.M212.src.records import SceneDataset

logger = get_logger("M210")

TRAINER_ACTIONS = ("pretrain", "finetune", "read_log")
DATASET_ACTIONS = (
    "generate", "write_dataset", "read_dataset", "write_png", "read_png", "write_depth", "read_depth",
    "write_layout", "read_layout", "write_latent", "read_latent", "write_cameras", "read_cameras",
    "write_yaml", "metrics", "score_grasp", "oracle_render",
)


class LearningHandlerNode(InternalNode):
    """
    M210 - Learning Handler Internal Node

    Responsibility: route trainer and dataset requests
    Children: M211 (Trainer), M212 (Dataset Kit)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M210",
            name="Learning Handler",
            level=NodeLevel.LEVEL_2,
            node_type=NodeType.HANDLER,
            parent_id="M200",
            left_child_id="M211",
            right_child_id="M212",
            metadata={"role": "learning"},
        )
        super().__init__(config)
        self._init_children()

    def _init_children(self):
        """Initialize child nodes."""
        self._adopt(create_m211(), create_m212())

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": one of TRAINER_ACTIONS or DATASET_ACTIONS,
            ... fields understood by the receiving child
        }
        A "pretrain" request may name a "dataset_path" instead of passing a dataset.
        """
        action = input_data.get("action", "")
        try:
            if action in TRAINER_ACTIONS:
                request = dict(input_data)
                if action == "pretrain" and request.get("dataset") is None and request.get("dataset_path"):
                    request["dataset"] = self.read_dataset(request["dataset_path"])
                return self.forward(self.left, request)
            if action in DATASET_ACTIONS:
                return self.forward(self.right, input_data)
            return self.unknown_action(action)
        except Exception as exc:
            logger.error("learning %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def read_dataset(self, path) -> SceneDataset:
        result = self.right.process({"action": "read_dataset", "path": path})
        if not result.success:
            raise ValueError(f"cannot read dataset {path}: {result.error}")
        return result.data

    def capabilities(self) -> Dict[str, Any]:
        return {"trainer": list(TRAINER_ACTIONS), "dataset": list(DATASET_ACTIONS)}

    def metrics(self, a, b) -> Optional[Dict[str, Any]]:
        result = self.forward(self.right, {"action": "metrics", "a": a, "b": b})
        return result.data if result.success else None


# Factory function
def create_node() -> LearningHandlerNode:
    """Create and return M210 node instance."""
    return LearningHandlerNode()
