"""
Unit tests for M110 - Rendering Handler (Internal Node)

Tests cover:
- Ray integration against closed-form compositing
- Background, alpha and depth outputs; energy bound
- Invariance to the order of the scene's object list
- Full-image rendering with constant fields
- Thread-count invariance of chunked rendering
- Pixel-subset rendering and grasp-score colouring
- Child routing
"""
import numpy as np
import pytest
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.interfaces import GraspField, RadianceField
from shared.types import BoundingVolume, Camera, LatentCode, ObjectInstance, Pose, Scene, SceneValidationError
from shared.utils import autodiff as ad
from tree.M110.src.main import create_node, integrate_ray, render_pixels, score_colormap


class ConstantField(RadianceField, GraspField):
    """Uniform density and colour per object column."""

    def __init__(self, sigma, colors, score=1.0):
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.colors = np.asarray(colors, dtype=np.float64)
        self.score = score

    def density(self, p_obj, columns):
        return self.sigma[columns]

    def radiance(self, p_obj, d_obj, columns):
        return self.sigma[columns], self.colors[columns]

    def grasp(self, p_obj, columns):
        n = len(columns)
        return np.full(n, self.score), np.tile([0.0, 0.0, 1.0], (n, 1)), np.tile([1.0, 0.0, 0.0], (n, 1))


class DensityOnly(RadianceField):
    def density(self, p_obj, columns):
        return np.ones(len(columns))

    def radiance(self, p_obj, d_obj, columns):
        return np.ones(len(columns)), np.zeros((len(columns), 3))


def box_scene(background=(1.0, 1.0, 1.0)):
    obj = ObjectInstance(0, Pose.identity(), BoundingVolume([0.1, 0.1, 0.1]), LatentCode.zeros(2))
    return Scene((obj,), np.asarray(background, dtype=np.float64))


BLUE_FIELD = ConstantField([10.0], [[0.0, 0.0, 1.0]])


class TestIntegrateRay:
    """Compositing along rays."""

    def test_empty_ray_shows_background(self):
        out = integrate_ray(np.zeros((1, 3)), np.ones((1, 3, 3)), np.full((1, 3), 0.1),
                            np.array([[1.0, 2.0, 3.0]]), np.array([0.2, 0.4, 0.6]))
        np.testing.assert_allclose(out.rgb, [[0.2, 0.4, 0.6]])
        assert out.alpha[0] == 0.0
        assert out.depth[0] == 0.0

    def test_closed_form(self):
        """Two unit-optical-depth halves composite like one segment."""
        sigma = np.array([[2.0, 2.0]])
        color = np.tile([1.0, 0.0, 0.0], (1, 2, 1))
        out = integrate_ray(sigma, color, np.full((1, 2), 0.5), np.array([[1.0, 1.5]]), np.zeros(3))
        alpha = 1.0 - np.exp(-2.0)
        assert out.alpha[0] == pytest.approx(alpha)
        np.testing.assert_allclose(out.rgb, [[alpha, 0.0, 0.0]])
        w0, w1 = 1.0 - np.exp(-1.0), np.exp(-1.0) * (1.0 - np.exp(-1.0))
        np.testing.assert_allclose(out.weights, [[w0, w1]])
        assert out.depth[0] == pytest.approx((w0 * 1.0 + w1 * 1.5) / alpha)

    def test_energy_bound(self):
        """Opacity stays in [0, 1] and no channel exceeds the brightest sample or the background."""
        rng = np.random.default_rng(6)
        sigma = rng.exponential(20.0, size=(200, 9))
        color = rng.uniform(size=(200, 9, 3))
        delta = rng.uniform(0.0, 0.05, size=(200, 9))
        depth = np.cumsum(delta, axis=1) + 1.0
        background = np.array([0.3, 0.9, 0.1])
        out = integrate_ray(sigma, color, delta, depth, background)
        assert np.all(out.alpha >= 0.0) and np.all(out.alpha <= 1.0)
        ceiling = np.maximum(color.max(axis=1), background)
        assert np.all(out.rgb <= ceiling + 1e-12)
        assert np.all(out.rgb >= 0.0)

    def test_nan_rejected(self):
        with pytest.raises(SceneValidationError):
            integrate_ray(np.array([[np.nan]]), np.zeros((1, 1, 3)), np.ones((1, 1)), np.ones((1, 1)), np.zeros(3))

    def test_negative_density_rejected(self):
        with pytest.raises(SceneValidationError):
            integrate_ray(np.array([[-1.0]]), np.zeros((1, 1, 3)), np.ones((1, 1)), np.ones((1, 1)), np.zeros(3))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(SceneValidationError):
            integrate_ray(np.ones((1, 2)), np.zeros((1, 2, 3)), np.ones((1, 3)), np.ones((1, 2)), np.zeros(3))

    def test_density_gradient(self):
        """d rgb / d sigma from the tape matches finite differences."""
        sigma0 = np.array([[0.5, 1.5, 0.7]])
        color = np.random.default_rng(2).uniform(size=(1, 3, 3))
        delta = np.full((1, 3), 0.3)
        depth = np.array([[1.0, 1.3, 1.6]])

        def loss(s):
            return float(np.sum(integrate_ray(s, color, delta, depth, np.ones(3)).rgb))

        tape = ad.Tape()
        sigma = tape.variable(sigma0, name="sigma")
        grad = tape.backward(ad.sum_(integrate_ray(sigma, color, delta, depth, np.ones(3)).rgb))["sigma"]
        numeric = np.zeros_like(sigma0)
        for j in range(3):
            plus, minus = sigma0.copy(), sigma0.copy()
            plus[0, j] += 1e-6
            minus[0, j] -= 1e-6
            numeric[0, j] = (loss(plus) - loss(minus)) / 2e-6
        np.testing.assert_allclose(grad, numeric, rtol=1e-5)


class TestScoreColormap:
    def test_red_to_green(self):
        np.testing.assert_allclose(score_colormap(np.array([0.0, 1.0, 0.5])),
                                   [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.0]])


class TestRender:
    """Full-image rendering."""

    def test_centre_pixel_closed_form(self):
        """A uniform box seen face-on: optical length runs from the first sample to the exit."""
        camera = Camera.look_at([0.0, -1.0, 0.0], 1, 1, 12.0)
        image = create_node().render(box_scene(), camera, BLUE_FIELD, num_samples=16)
        alpha = 1.0 - np.exp(-10.0 * (1.1 - (0.9 + 0.2 / 32)))
        assert image.alpha[0, 0] == pytest.approx(alpha)
        np.testing.assert_allclose(image.rgb[0, 0], [1.0 - alpha, 1.0 - alpha, 1.0])
        assert image.valid[0, 0]
        assert 0.9 < image.depth[0, 0] < 1.1

    def test_object_order_invariance(self):
        """Reordering the scene's object list (and the field columns with it) leaves the image unchanged."""
        near = ObjectInstance(3, Pose.identity(), BoundingVolume([0.1, 0.1, 0.1]), LatentCode.zeros(2))
        far = ObjectInstance(8, Pose(np.eye(3), [0.05, 0.06, 0.02]), BoundingVolume([0.08, 0.08, 0.08]),
                             LatentCode.zeros(2))
        camera = Camera.look_at([0.3, -1.0, 0.2], 10, 8, 25.0)
        a = create_node().render(Scene((near, far)), camera,
                                 ConstantField([10.0, 30.0], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), num_samples=7)
        b = create_node().render(Scene((far, near)), camera,
                                 ConstantField([30.0, 10.0], [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]), num_samples=7)
        assert a.valid.any()
        np.testing.assert_allclose(a.rgb, b.rgb, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(a.depth, b.depth, rtol=1e-12, atol=1e-15)
        np.testing.assert_array_equal(a.valid, b.valid)

    def test_misses_are_background_and_invalid(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 16, 16, 40.0)
        image = create_node().render(box_scene((0.0, 0.5, 0.0)), camera, BLUE_FIELD, num_samples=4)
        assert image.shape == (16, 16)
        np.testing.assert_allclose(image.rgb[0, 0], [0.0, 0.5, 0.0])
        assert not image.valid[0, 0]
        assert image.depth[0, 0] == 0.0
        assert image.valid[8, 8]

    def test_thread_invariance(self):
        """Chunked parallel rendering is bit-identical to the serial result."""
        camera = Camera.look_at([0.3, -1.0, 0.2], 12, 10, 25.0)
        serial = create_node()
        serial.defaults["chunk_size"] = 7
        parallel = create_node()
        parallel.defaults["chunk_size"] = 7
        parallel.set_threads(4)
        a = serial.render(box_scene(), camera, BLUE_FIELD, num_samples=5)
        b = parallel.render(box_scene(), camera, BLUE_FIELD, num_samples=5)
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_empty_scene(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 4, 4, 12.0)
        image = create_node().render(Scene(), camera, BLUE_FIELD)
        np.testing.assert_array_equal(image.rgb, np.ones((4, 4, 3)))
        assert not image.valid.any()

    def test_differentiable_field_rejected(self):
        class TapedField(ConstantField):
            @property
            def is_differentiable(self):
                return True

        camera = Camera.look_at([0.0, -1.0, 0.0], 2, 2, 12.0)
        result = create_node().process({"action": "render", "scene": box_scene(), "camera": camera,
                                        "field": TapedField([1.0], [[0.0, 0.0, 0.0]])})
        assert not result.success
        assert result.error_kind == "validation"


class TestGraspFieldRender:
    """Grasp-score images."""

    def test_perfect_score_is_green(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 1, 1, 12.0)
        image = create_node().render_grasp_field(box_scene((0.0, 0.0, 0.0)), camera, BLUE_FIELD, num_samples=8)
        alpha = 1.0 - np.exp(-10.0 * (1.1 - (0.9 + 0.2 / 16)))
        np.testing.assert_allclose(image.rgb[0, 0], [0.0, alpha, 0.0])

    def test_needs_grasp_field(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 1, 1, 12.0)
        result = create_node().process({"action": "render_grasp_field", "scene": box_scene(), "camera": camera,
                                        "field": DensityOnly()})
        assert not result.success
        assert "grasp field" in result.error


class TestRenderPixels:
    """Pixel-subset rendering used in training."""

    def test_matches_full_render(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 8, 8, 30.0)
        full = create_node().render(box_scene(), camera, BLUE_FIELD, num_samples=6)
        pixels = np.array([0, 27, 36, 63])
        rgb = render_pixels(box_scene(), camera, pixels, BLUE_FIELD, 6)
        np.testing.assert_allclose(rgb, full.rgb.reshape(-1, 3)[pixels], atol=1e-12)

    def test_duplicate_pixels(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 4, 4, 12.0)
        rgb = render_pixels(box_scene(), camera, np.array([5, 5, 6]), BLUE_FIELD, 4)
        np.testing.assert_array_equal(rgb[0], rgb[1])
        assert rgb.shape == (3, 3)

    def test_all_misses(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 4, 4, 12.0)
        rgb = render_pixels(Scene(), camera, np.array([0, 1]), BLUE_FIELD, 4)
        np.testing.assert_array_equal(rgb, np.ones((2, 3)))

    def test_out_of_range(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 2, 2, 12.0)
        with pytest.raises(SceneValidationError):
            render_pixels(box_scene(), camera, np.array([4]), BLUE_FIELD, 4)


class TestRenderingHandlerNode:
    """Test suite for RenderingHandlerNode (M110)."""

    def test_node_creation(self):
        node = create_node()
        assert node.node_id == "M110"
        assert node.left.node_id == "M111"
        assert node.right.node_id == "M112"
        assert node.defaults["num_samples"] == 32

    def test_trace_routes_left(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 2, 2, 12.0)
        result = create_node().process({"action": "trace", "camera": camera, "scene": box_scene()})
        assert result.success
        assert result.node_id == "M110"
        assert result.data.num_rays == 4

    def test_march_routes_right(self):
        camera = Camera.look_at([0.0, -1.0, 0.0], 2, 2, 12.0)
        node = create_node()
        table = node.process({"action": "trace", "camera": camera, "scene": box_scene()}).data
        result = node.process({"action": "march", "table": table, "num_samples": 3})
        assert result.data.depths.shape == (4, 3)

    def test_unknown_action(self):
        assert not create_node().process({"action": "paint"}).success
