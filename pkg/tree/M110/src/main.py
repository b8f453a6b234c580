"""
M110 - Rendering Handler
Level 2 Internal Node: compositional volumetric rendering

Children:
- M111 (Raytracer) - Left child
- M112 (Raymarcher) - Right child

Responsibility: raytrace → march → field query → ray integration, for
RGB/depth/alpha images and grasp-score images.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    Camera, InternalNode, NodeConfig, NodeLevel, NodeResult, NodeType, Scene, SceneValidationError,
)
from shared.interfaces import GraspField, RadianceField
from shared.utils import autodiff as ad
from shared.utils import get_logger, map_chunks
from shared.utils.autodiff import ArrayLike, value_of
from shared.utils.config import node_defaults

from tree.M111.src.main import (
    IntersectionTable, RayBundle, create_node as create_m111, generate_rays, intersect,
)
from tree.M112.src.main import RaySampleBatch, create_node as create_m112, march

logger = get_logger("M110")

ALPHA_EPS = 1e-10
DEPTH_VALID_ALPHA = 1e-3


@dataclass(frozen=True, eq=False)
class RayIntegral:
    """Per-ray integration results for the rays of one sample batch."""
    rgb: ArrayLike
    alpha: ArrayLike
    depth: ArrayLike
    weights: ArrayLike


@dataclass(frozen=True, eq=False)
class RenderedImage:
    """H×W×3 colour, H×W depth, alpha and depth-validity mask."""
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.alpha.shape


def score_colormap(score: ArrayLike) -> ArrayLike:
    """Score 0 → red (1, 0, 0), score 1 → green (0, 1, 0), linear in between."""
    s = ad.reshape(score, (-1, 1))
    return ad.concat([ad.sub(1.0, s), s, ad.mul(s, 0.0)], axis=-1)


def integrate_ray(sigma: ArrayLike, color: ArrayLike, delta: np.ndarray, depth: np.ndarray,
                  background: np.ndarray) -> RayIntegral:
    """Volumetric rendering of (N, S) samples.

    α_j = 1 − exp(−σ_j δ_j), T_j = Π_{k<j}(1 − α_k) = exp(−Σ_{k<j} σ_k δ_k),
    rgb = Σ T_j α_j c_j + T_final · background, alpha = 1 − T_final,
    depth = Σ T_j α_j d_j / max(alpha, ε).
    """
    sigma_v, color_v = value_of(sigma), value_of(color)
    delta = np.asarray(delta, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    for name, arr in (("sigma", sigma_v), ("color", color_v), ("delta", delta), ("depth", depth)):
        if np.any(np.isnan(arr)):
            raise SceneValidationError(f"{name} contains NaN")
    if sigma_v.shape != delta.shape or sigma_v.shape != depth.shape or color_v.shape != sigma_v.shape + (3,):
        raise SceneValidationError("sample arrays must share shape (N, S) with colours (N, S, 3)")
    if np.any(sigma_v < 0.0) or np.any(delta < 0.0):
        raise SceneValidationError("densities and segment lengths must be non-negative")

    optical = ad.mul(sigma, delta)
    alpha_j = ad.sub(1.0, ad.exp(ad.neg(optical)))
    trans = ad.exp(ad.neg(ad.cumsum_exclusive(optical, axis=-1)))
    weights = ad.mul(trans, alpha_j)
    t_final = ad.exp(ad.neg(ad.sum_(optical, axis=-1)))

    rgb = ad.add(ad.sum_(ad.mul(ad.reshape(weights, sigma_v.shape + (1,)), color), axis=1),
                 ad.mul(ad.reshape(t_final, (-1, 1)), np.asarray(background, dtype=np.float64)))
    alpha = ad.sub(1.0, t_final)
    depth_out = ad.div(ad.sum_(ad.mul(weights, depth), axis=-1), ad.clamp_min(alpha, ALPHA_EPS))
    return RayIntegral(rgb, alpha, depth_out, weights)


def query_samples(field: RadianceField, batch: RaySampleBatch, scene: Scene):
    """Field densities and colours at every sample, in each sample's object frame."""
    rotations, translations = scene.stacked_poses()
    cols = batch.columns.reshape(-1)
    pos = batch.positions.reshape(-1, 3)
    dirs = np.repeat(batch.directions, batch.samples_per_ray, axis=0)
    rot = rotations[cols]
    p_obj = np.einsum("sk,skj->sj", pos - translations[cols], rot)
    d_obj = np.einsum("sk,skj->sj", dirs, rot)
    sigma, color = field.radiance(p_obj, d_obj, cols)
    shape = batch.depths.shape
    return ad.reshape(sigma, shape), ad.reshape(color, shape + (3,)), p_obj, cols


def grasp_colors(field: GraspField, p_obj: np.ndarray, cols: np.ndarray, shape,
                 colormap: Callable[[ArrayLike], ArrayLike]) -> ArrayLike:
    score, _, _ = field.grasp(p_obj, cols)
    return ad.reshape(colormap(score), tuple(shape) + (3,))


def render_table(table: IntersectionTable, scene: Scene, field: RadianceField, num_samples: int,
                 rng: Optional[np.random.Generator] = None,
                 grasp_field: Optional[GraspField] = None,
                 colormap: Callable[[ArrayLike], ArrayLike] = score_colormap) -> RayIntegral:
    """Integrate the surviving rays of a table; colours optionally replaced by grasp scores."""
    batch = march(table, num_samples, rng)
    sigma, color, p_obj, cols = query_samples(field, batch, scene)
    if grasp_field is not None:
        color = grasp_colors(grasp_field, p_obj, cols, batch.depths.shape, colormap)
    return integrate_ray(sigma, color, batch.deltas, batch.depths, scene.background_color)


def scatter_rays(values: ArrayLike, rows: np.ndarray, total: int, fill: np.ndarray) -> ArrayLike:
    """(total, ...) array holding `values` at `rows` and `fill` elsewhere; differentiable."""
    rows = np.asarray(rows, dtype=np.int64)
    fill = np.asarray(fill, dtype=np.float64)
    missing = np.setdiff1d(np.arange(total), rows)
    tail_shape = value_of(values).shape[1:]
    filler = np.broadcast_to(fill, (missing.size,) + tail_shape)
    order = np.argsort(np.concatenate([rows, missing]), kind="stable")
    return ad.take_rows(ad.concat([values, filler], axis=0), order)


def render_pixels(scene: Scene, camera: Camera, pixels: np.ndarray, field: RadianceField, num_samples: int,
                  rng: Optional[np.random.Generator] = None) -> ArrayLike:
    """(B, 3) colours for a pixel subset; differentiable when the field is on a tape.

    Rays that hit no volume take the background colour.
    """
    pixels = np.asarray(pixels, dtype=np.int64)
    if num_samples < 1:
        raise SceneValidationError("num_samples must be positive")
    if pixels.size and (pixels.min() < 0 or pixels.max() >= camera.num_pixels):
        raise SceneValidationError("pixel index out of range")
    rays = generate_rays(camera)
    # index rays by batch row so duplicate pixels stay distinct
    batch_rays = RayBundle(rays.origins[pixels], rays.directions[pixels], np.arange(pixels.size))
    table = intersect(batch_rays, scene, num_pixels=pixels.size)
    if table.num_rays == 0:
        return np.broadcast_to(scene.background_color, (pixels.size, 3)).copy()
    result = render_table(table, scene, field, num_samples, rng)
    return scatter_rays(result.rgb, table.ray_pixel_index, pixels.size, scene.background_color)


class RenderingHandlerNode(InternalNode):
    """
    M110 - Rendering Handler Internal Node

    Responsibility: compose raytracing, raymarching and integration
    Children: M111 (Raytracer), M112 (Raymarcher)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M110",
            name="Rendering Handler",
            level=NodeLevel.LEVEL_2,
            node_type=NodeType.HANDLER,
            parent_id="M100",
            left_child_id="M111",
            right_child_id="M112",
            metadata={"role": "volumetric_rendering"},
        )
        super().__init__(config)
        self.defaults: Dict[str, Any] = node_defaults("M110")
        self._init_children()

    def _init_children(self):
        """Initialize child nodes."""
        self._adopt(create_m111(), create_m112())

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "render" | "render_grasp_field" | "trace" | "march" | "dump_table" | "dump_samples",
            "scene": Scene, "camera": Camera, "field": RadianceField,
            "grasp_field": GraspField,          # render_grasp_field
            "num_samples": int                   # J + 1
        }
        """
        action = input_data.get("action", "render")
        try:
            if action == "render":
                data = self.render(input_data["scene"], input_data["camera"], input_data["field"],
                                   input_data.get("num_samples"))
            elif action == "render_grasp_field":
                data = self.render_grasp_field(input_data["scene"], input_data["camera"], input_data["field"],
                                               input_data.get("grasp_field"), input_data.get("num_samples"))
            elif action in ("trace", "dump_table"):
                return self.forward(self.left, input_data)
            elif action in ("march", "dump_samples"):
                request = dict(input_data)
                request["action"] = "march" if action == "march" else "dump"
                return self.forward(self.right, request)
            else:
                return self.unknown_action(action)
            return NodeResult(success=True, data=data, node_id=self.node_id)
        except Exception as exc:
            logger.error("rendering %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)

    def _samples(self, num_samples: Optional[int]) -> int:
        return int(self.defaults["num_samples"] if num_samples is None else num_samples)

    def render(self, scene: Scene, camera: Camera, field: RadianceField,
               num_samples: Optional[int] = None) -> RenderedImage:
        """Inference render of a full image, parallel over fixed pixel chunks."""
        return self._render(scene, camera, field, self._samples(num_samples), None, score_colormap)

    def render_grasp_field(self, scene: Scene, camera: Camera, field: RadianceField,
                           grasp_field: Optional[GraspField] = None, num_samples: Optional[int] = None,
                           colormap: Callable[[ArrayLike], ArrayLike] = score_colormap) -> RenderedImage:
        """Render with colours replaced by the colour-mapped grasp score; density still from the field."""
        if grasp_field is None:
            if not isinstance(field, GraspField):
                raise SceneValidationError("a grasp field is required to render grasp scores")
            grasp_field = field
        return self._render(scene, camera, field, self._samples(num_samples), grasp_field, colormap)

    def _render(self, scene: Scene, camera: Camera, field: RadianceField, num_samples: int,
                grasp_field: Optional[GraspField], colormap) -> RenderedImage:
        if field.is_differentiable:
            raise SceneValidationError("image rendering runs tape-free; use render_table for training")
        if num_samples < 1:
            raise SceneValidationError("num_samples must be positive")
        rays = generate_rays(camera)
        pixels = camera.num_pixels
        rgb = np.broadcast_to(scene.background_color, (pixels, 3)).copy()
        alpha = np.zeros(pixels)
        depth = np.zeros(pixels)

        def render_chunk(start: int, stop: int):
            table = intersect(rays.select(np.arange(start, stop)), scene, num_pixels=pixels)
            if table.num_rays == 0:
                return table.ray_pixel_index, None
            return table.ray_pixel_index, render_table(table, scene, field, num_samples, None, grasp_field, colormap)

        for index, result in map_chunks(render_chunk, pixels, threads=self.threads,
                                        chunk_size=int(self.defaults["chunk_size"])):
            if result is None:
                continue
            rgb[index] = result.rgb
            alpha[index] = result.alpha
            depth[index] = result.depth

        valid = alpha >= DEPTH_VALID_ALPHA
        depth = np.where(valid, depth, 0.0)
        shape = (camera.height, camera.width)
        logger.debug("rendered %dx%d image, %d covered pixels", camera.width, camera.height, int(valid.sum()))
        return RenderedImage(rgb.reshape(shape + (3,)), depth.reshape(shape), alpha.reshape(shape),
                             valid.reshape(shape))

    def render_rays(self, scene: Scene, camera: Camera, pixels: np.ndarray, field: RadianceField,
                    num_samples: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> ArrayLike:
        """Pixel-subset render with this node's default sample count."""
        return render_pixels(scene, camera, pixels, field, self._samples(num_samples), rng)


# Factory function
def create_node() -> RenderingHandlerNode:
    """Create and return M110 node instance."""
    return RenderingHandlerNode()
