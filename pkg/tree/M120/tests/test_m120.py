"""
Unit tests for M120 - Network Handler (Internal Node)

Tests cover:
- Routing of decoder and checkpoint actions
- Remembering the active checkpoint
- Binding checkpoints to scene layouts
"""
import numpy as np
import pytest
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import BoundingVolume, LatentCode, ObjectInstance, Pose, Scene
from tree.M120.src.main import create_node, scene_field

SMALL = {"latent_dim": 4, "hidden": 8, "num_layers": 1, "pos_freqs": 1, "dir_freqs": 1,
         "include_input": True, "seed": 0}


def scene_with_latents(*latents):
    return Scene(tuple(ObjectInstance(i, Pose.identity(), BoundingVolume([0.1, 0.1, 0.1]), LatentCode(z))
                       for i, z in enumerate(latents)))


@pytest.fixture
def node():
    return create_node()


class TestNetworkHandlerNode:
    """Test suite for NetworkHandlerNode (M120)."""

    def test_node_creation(self, node):
        assert node.node_id == "M120"
        assert node.left.node_id == "M121"
        assert node.right.node_id == "M122"
        assert node.checkpoint is None

    def test_init_remembers_checkpoint(self, node):
        result = node.process({"action": "init", "decoder": SMALL, "num_latents": 2})
        assert result.success
        assert result.node_id == "M120"
        assert node.checkpoint is result.data

    def test_save_then_load(self, node, tmp_path):
        ckpt = node.process({"action": "init", "decoder": SMALL, "num_latents": 1}).data
        path = tmp_path / "model.ckpt"
        assert node.process({"action": "save", "path": str(path), "checkpoint": ckpt}).success
        fresh = create_node()
        loaded = fresh.load(path)
        assert fresh.checkpoint is loaded
        assert loaded.config.latent_dim == 4

    def test_bind_without_checkpoint(self, node):
        result = node.process({"action": "bind", "scene": scene_with_latents([0.0] * 4)})
        assert not result.success
        assert result.error_kind == "validation"

    def test_bind_uses_scene_latents(self, node):
        node.process({"action": "init", "decoder": SMALL, "num_latents": 0})
        scene = scene_with_latents([1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0])
        field = node.process({"action": "bind", "scene": scene}).data
        np.testing.assert_array_equal(field.latents, scene.latent_matrix())

    def test_bind_rejects_wrong_latent_dim(self, node):
        ckpt = node.process({"action": "init", "decoder": SMALL}).data
        result = node.process({"action": "bind", "scene": scene_with_latents([0.0] * 3), "checkpoint": ckpt})
        assert result.error_kind == "validation"

    def test_scene_field_density(self, node):
        ckpt = node.process({"action": "init", "decoder": SMALL}).data
        field = scene_field(ckpt, scene_with_latents([0.1] * 4))
        assert field.density(np.zeros((2, 3)), np.array([0, 0])).shape == (2,)

    def test_parameter_report(self, node):
        report = node.parameter_report(SMALL)
        assert report["total"] == report["radiance"] + report["grasp_head"]

    def test_unknown_action(self, node):
        assert node.process({"action": "train"}).error_kind == "validation"
