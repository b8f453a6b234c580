"""
Unit tests for M210 - Learning Handler (Internal Node)

Tests cover:
- Routing of trainer and dataset-kit actions
- Pre-training from a dataset directory
- Metrics shortcut
"""
import numpy as np
import pytest
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from tree.M210.src.main import DATASET_ACTIONS, TRAINER_ACTIONS, create_node

TINY = {"num_objects": 1, "num_test_objects": 0, "num_views": 1, "num_grasps": 1, "width": 6, "height": 6,
        "oracle_samples": 8, "grasp_trials": 2, "shapes": ["box"], "seed": 1}
FAST = {"epochs": 1, "steps_per_epoch": 1, "rays_per_batch": 4, "grasps_per_batch": 1, "num_samples": 2,
        "progress": False}
DECODER = {"latent_dim": 2, "hidden": 4, "num_layers": 1, "pos_freqs": 1, "dir_freqs": 1}


@pytest.fixture
def node():
    return create_node()


class TestLearningHandlerNode:
    """Test suite for LearningHandlerNode (M210)."""

    def test_node_creation(self, node):
        assert node.node_id == "M210"
        assert node.left.node_id == "M211"
        assert node.right.node_id == "M212"

    def test_capabilities(self, node):
        caps = node.capabilities()
        assert caps["trainer"] == list(TRAINER_ACTIONS)
        assert "generate" in caps["dataset"]
        assert not set(TRAINER_ACTIONS) & set(DATASET_ACTIONS)

    def test_generate_routes_right(self, node):
        result = node.process({"action": "generate", "config": TINY})
        assert result.success
        assert result.node_id == "M210"
        assert len(result.data) == 1

    def test_pretrain_from_dataset_path(self, node, tmp_path):
        """A dataset directory is read through the dataset kit before training."""
        dataset = node.process({"action": "generate", "config": TINY}).data
        node.process({"action": "write_dataset", "path": str(tmp_path / "ds"), "dataset": dataset})
        result = node.process({"action": "pretrain", "dataset_path": str(tmp_path / "ds"), "config": FAST,
                               "decoder": DECODER})
        assert result.success
        assert result.data.num_latents == 1

    def test_pretrain_missing_dataset(self, node, tmp_path):
        result = node.process({"action": "pretrain", "dataset_path": str(tmp_path / "nowhere"), "config": FAST})
        assert not result.success
        assert "cannot read dataset" in result.error

    def test_metrics_shortcut(self, node):
        image = np.full((12, 12, 3), 0.5)
        assert node.metrics(image, image)["exact_match"] is True
        assert node.metrics(image, np.zeros((4, 4, 3))) is None

    def test_unknown_action(self, node):
        result = node.process({"action": "render"})
        assert not result.success
        assert result.error_kind == "validation"
