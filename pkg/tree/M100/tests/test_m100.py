"""
Unit tests for M100 - Representation Manager (Internal Node)

Tests cover:
- Checkpoint resolution (object, path, remembered)
- Rendering layouts through bound decoders
- Grasp-field rendering
- Routing to rendering and network children
"""
import numpy as np
import pytest
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import BoundingVolume, Camera, LatentCode, ObjectInstance, Pose, Scene
from tree.M100.src.main import create_node

SMALL = {"latent_dim": 4, "hidden": 8, "num_layers": 1, "pos_freqs": 1, "dir_freqs": 1,
         "include_input": True, "seed": 0}
CAMERA = Camera.look_at([0.0, -1.0, 0.0], 6, 6, 20.0)


def layout(latent=(0.3, -0.2, 0.1, 0.0)):
    obj = ObjectInstance(0, Pose.identity(), BoundingVolume([0.1, 0.1, 0.1]), LatentCode(latent))
    return Scene((obj,))


@pytest.fixture
def node():
    return create_node()


@pytest.fixture
def checkpoint(node):
    return node.process({"action": "init_checkpoint", "decoder": SMALL, "num_latents": 1}).data


class TestRepresentationManagerNode:
    """Test suite for RepresentationManagerNode (M100)."""

    def test_node_creation(self, node):
        assert node.node_id == "M100"
        assert node.left.node_id == "M110"
        assert node.right.node_id == "M120"

    def test_render_with_checkpoint_object(self, node, checkpoint):
        result = node.process({"action": "render", "scene": layout(), "camera": CAMERA,
                               "checkpoint": checkpoint, "num_samples": 4})
        assert result.success
        image = result.data
        assert image.rgb.shape == (6, 6, 3)
        assert np.all((image.rgb >= 0.0) & (image.rgb <= 1.0))

    def test_render_uses_remembered_checkpoint(self, node, checkpoint):
        """init_checkpoint leaves the checkpoint active for later renders."""
        explicit = node.render(layout(), CAMERA, checkpoint, 4)
        implicit = node.process({"action": "render", "scene": layout(), "camera": CAMERA, "num_samples": 4}).data
        np.testing.assert_array_equal(explicit.rgb, implicit.rgb)

    def test_render_from_path(self, node, checkpoint, tmp_path):
        path = tmp_path / "model.ckpt"
        assert node.process({"action": "save_checkpoint", "path": str(path), "checkpoint": checkpoint}).success
        result = create_node().process({"action": "render_depth", "scene": layout(), "camera": CAMERA,
                                        "checkpoint_path": str(path), "num_samples": 4})
        assert result.success
        assert result.data.depth.shape == (6, 6)

    def test_latent_changes_image(self, node, checkpoint):
        a = node.render(layout(), CAMERA, checkpoint, 4)
        b = node.render(layout((-1.0, 1.0, 0.5, 2.0)), CAMERA, checkpoint, 4)
        assert not np.array_equal(a.rgb, b.rgb)

    def test_render_grasp_field(self, node, checkpoint):
        image = node.process({"action": "render_grasp_field", "scene": layout(), "camera": CAMERA,
                              "num_samples": 4}).data
        blue = image.rgb[..., 2]
        bg_weight = 1.0 - image.alpha
        np.testing.assert_allclose(blue, bg_weight, atol=1e-12)

    def test_no_checkpoint(self, node):
        result = node.process({"action": "render", "scene": layout(), "camera": CAMERA})
        assert not result.success
        assert result.error_kind == "validation"

    def test_bind(self, node, checkpoint):
        field = node.process({"action": "bind", "scene": layout()}).data
        np.testing.assert_array_equal(field.latents, [[0.3, -0.2, 0.1, 0.0]])

    def test_param_count(self, node):
        assert node.process({"action": "param_count", "decoder": SMALL}).data["latent_per_object"] == 4

    def test_trace_routes_left(self, node):
        result = node.process({"action": "trace", "scene": layout(), "camera": CAMERA})
        assert result.success
        assert result.node_id == "M100"
