"""
M200 - Application Manager
Level 1 Internal Node: learning and output coordination

Children:
- M210 (Learning Handler) - Left child
- M220 (Output Handler) - Right child

Responsibility: route training/dataset requests left and grasp/voxel requests
right; combines both sides when predicted grasps are checked against the
analytic stability oracle.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import InternalNode, NodeConfig, NodeLevel, NodeResult, NodeType
from shared.utils import get_logger
from shared.utils.config import node_defaults

from tree.M210.src.main import DATASET_ACTIONS, TRAINER_ACTIONS, create_node as create_m210
from tree.M212.src.records import SceneRecord
from tree.M220.src.main import FIELD_ACTIONS, GRASP_ACTIONS, create_node as create_m220
from tree.M221.src.main import GraspEvaluation

logger = get_logger("M200")

ORACLE_ACCEPT_SCORE = float(node_defaults("M200").get("oracle_accept_score", 0.5))


class ApplicationManagerNode(InternalNode):
    """
    M200 - Application Manager Internal Node

    Responsibility: coordinate learning and outputs
    Children: M210 (Learning Handler), M220 (Output Handler)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M200",
            name="Application Manager",
            level=NodeLevel.LEVEL_1,
            node_type=NodeType.MANAGER,
            parent_id="M000",
            left_child_id="M210",
            right_child_id="M220",
            metadata={"role": "application_management"},
        )
        super().__init__(config)
        self.defaults: Dict[str, Any] = node_defaults("M200")
        self._init_children()

    def _init_children(self):
        """Initialize child nodes."""
        self._adopt(create_m210(), create_m220())

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": any M210 or M220 action, "oracle_check" or "capabilities",
            "record": SceneRecord, "field": field, "config": GraspConfig fields,
            "trials": int, "seed": int (oracle_check)
        }
        """
        action = input_data.get("action", "capabilities")
        try:
            if action in TRAINER_ACTIONS or action in DATASET_ACTIONS:
                return self.forward(self.left, input_data)
            if action in GRASP_ACTIONS or action in FIELD_ACTIONS or action in ("grasp_scene", "calibrate"):
                return self.forward(self.right, input_data)
            if action == "oracle_check":
                data = self.oracle_check(input_data["record"], input_data["field"], input_data.get("config"),
                                         int(input_data.get("trials", self.defaults.get("oracle_trials", 50))), input_data.get("seed"),
                                         input_data.get("gripper"))
                return NodeResult(success=True, data=data, node_id=self.node_id)
            if action == "capabilities":
                data = {
                    "learning": sorted(TRAINER_ACTIONS + DATASET_ACTIONS),
                    "outputs": sorted([*GRASP_ACTIONS, *FIELD_ACTIONS, "grasp_scene", "calibrate"]),
                }
                return NodeResult(success=True, data=data, node_id=self.node_id)
            return self.unknown_action(action)
        except Exception as exc:
            logger.error("application %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def oracle_check(self, record: SceneRecord, field, config: Optional[Dict[str, Any]] = None,
                     trials: Optional[int] = None, seed: Optional[int] = None, gripper=None) -> Dict[str, Any]:
        """Score every filtered proposal with the stability oracle and calibrate thresholds on the accepted ones."""
        trials = self.defaults.get("oracle_trials", 50) if trials is None else trials
        grasps = self._unwrap(self.right.process({
            "action": "grasp_scene", "scene": record.scene, "field": field, "config": config, "gripper": gripper,
        }))
        if gripper is None:
            width = (config or {}).get("gripper_width", self.right.left.defaults.gripper_width)
            gripper = self.right.left.gripper(width)
        evaluations: List[GraspEvaluation] = []
        scores: List[float] = []
        for column, object_id in enumerate(record.scene.ids):
            obj = record.objects[column]
            for evaluation in grasps[object_id]:
                p = evaluation.proposal
                scores.append(self._unwrap(self.left.process({
                    "action": "score_grasp", "object": obj, "position": p.position, "rotation": p.rotation,
                    "gripper": gripper, "trials": trials, "seed": None if seed is None else seed + len(scores),
                })))
                evaluations.append(evaluation)
        accepted = [s >= ORACLE_ACCEPT_SCORE for s in scores]
        report = None
        if any(accepted):
            report = self._unwrap(self.right.process({
                "action": "calibrate", "evaluations": evaluations, "accepted": accepted,
            }))
        logger.info("%s: %d of %d proposals accepted by the oracle", record.name, sum(accepted), len(scores))
        return {"evaluations": evaluations, "oracle_scores": scores, "accepted": accepted, "thresholds": report}

    @staticmethod
    def _unwrap(result: NodeResult) -> Any:
        if not result.success:
            raise ValueError(result.error)
        return result.data


# Factory function
def create_node() -> ApplicationManagerNode:
    """Create and return M200 node instance."""
    return ApplicationManagerNode()
