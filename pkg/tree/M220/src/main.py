"""
M220 - Output Handler
Level 2 Internal Node: grasp and voxel outputs

Children:
- M221 (Grasp Engine) - Left child
- M222 (Field Tools) - Right child

Responsibility: route grasp proposal/filtering to the grasp engine and voxel
and collision queries to the field tools; runs per-scene grasp sweeps.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import InternalNode, NodeConfig, NodeLevel, NodeResult, NodeType, Scene
from shared.utils import get_logger

from tree.M221.src.main import GraspEvaluation, calibrate_thresholds, create_node as create_m221
from tree.M222.src.main import create_node as create_m222

logger = get_logger("M220")

GRASP_ACTIONS = {
    "propose": "propose",
    "evaluate": "evaluate",
    "pipeline": "pipeline",
    "write_grasps": "write",
    "read_grasps": "read",
    "write_gripper": "write_gripper",
    "read_gripper": "read_gripper",
}
FIELD_ACTIONS = {
    "voxelize": "voxelize",
    "voxelize_scene": "voxelize_scene",
    "collide": "collide",
    "downsample": "downsample",
    "write_voxels": "write",
    "read_voxels": "read",
}


class OutputHandlerNode(InternalNode):
    """
    M220 - Output Handler Internal Node

    Responsibility: route grasp and field-tool requests
    Children: M221 (Grasp Engine), M222 (Field Tools)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M220",
            name="Output Handler",
            level=NodeLevel.LEVEL_2,
            node_type=NodeType.HANDLER,
            parent_id="M200",
            left_child_id="M221",
            right_child_id="M222",
            metadata={"role": "output_coordination"},
        )
        super().__init__(config)
        self._init_children()

    def _init_children(self):
        """Initialize child nodes."""
        self._adopt(create_m221(), create_m222())

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": one of GRASP_ACTIONS, FIELD_ACTIONS, "grasp_scene" or "calibrate",
            "scene": Scene, "field": neural or analytic field, "object_ids": [int] (grasp_scene),
            "evaluations": [GraspEvaluation], "accepted": [bool] (calibrate)
        }
        Child action names are renamed where both children read or write files.
        """
        action = input_data.get("action", "")
        try:
            if action in GRASP_ACTIONS:
                return self.forward(self.left, {**input_data, "action": GRASP_ACTIONS[action]})
            if action in FIELD_ACTIONS:
                return self.forward(self.right, {**input_data, "action": FIELD_ACTIONS[action]})
            if action == "grasp_scene":
                data = self.grasp_scene(input_data["scene"], input_data["field"], input_data.get("object_ids"),
                                        input_data.get("config"), input_data.get("gripper"))
                return NodeResult(success=True, data=data, node_id=self.node_id)
            if action == "calibrate":
                report = calibrate_thresholds(input_data["evaluations"], input_data["accepted"],
                                              float(input_data.get("margin", 1.5)))
                return NodeResult(success=True, data=report, node_id=self.node_id)
            return self.unknown_action(action)
        except Exception as exc:
            logger.error("output %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def grasp_scene(self, scene: Scene, field, object_ids: Optional[List[int]] = None,
                    config: Optional[Dict[str, Any]] = None, gripper=None) -> Dict[int, List[GraspEvaluation]]:
        """Propose and filter grasps for each requested object against the whole scene."""
        wanted = scene.ids if object_ids is None else list(object_ids)
        results: Dict[int, List[GraspEvaluation]] = {}
        for object_id in wanted:
            column = scene.ids.index(object_id)
            result = self.left.process({
                "action": "pipeline", "object": scene.objects[column], "column": column, "scene": scene,
                "field": field, "config": config, "gripper": gripper,
            })
            if not result.success:
                raise ValueError(f"object {object_id}: {result.error}")
            results[object_id] = result.data
        return results


# Factory function
def create_node() -> OutputHandlerNode:
    """Create and return M220 node instance."""
    return OutputHandlerNode()
