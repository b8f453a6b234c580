"""
Brute-force reference renderer.

Samples every ray uniformly over the union of its object intervals (no
per-object budget), sums the densities of all volumes containing each point,
mixes colours by density and composites front to back with a running
product of (1 − α). Used for ground-truth dataset images and as the reference
the compositional renderer is checked against.
"""
import numpy as np

from shared.interfaces import RadianceField
from shared.types import Camera, Scene, SceneValidationError
from tree.M110.src.main import DEPTH_VALID_ALPHA, RenderedImage
from tree.M111.src.main import generate_rays, slab_intervals

ORACLE_CHUNK = 2048


def composite(sigma: np.ndarray, color: np.ndarray, delta: np.ndarray, depth: np.ndarray,
              background: np.ndarray):
    """Front-to-back compositing loop over (N, S) samples; returns rgb, alpha, depth."""
    num_rays, num_samples = sigma.shape
    rgb = np.zeros((num_rays, 3))
    weighted_depth = np.zeros(num_rays)
    transmittance = np.ones(num_rays)
    for j in range(num_samples):
        alpha = 1.0 - np.exp(-sigma[:, j] * delta[:, j])
        weight = transmittance * alpha
        rgb += weight[:, None] * color[:, j]
        weighted_depth += weight * depth[:, j]
        transmittance = transmittance * (1.0 - alpha)
    rgb += transmittance[:, None] * np.asarray(background, dtype=np.float64)
    opacity = 1.0 - transmittance
    return rgb, opacity, weighted_depth / np.maximum(opacity, 1e-10)


def oracle_render(scene: Scene, camera: Camera, field: RadianceField, num_samples: int = 256) -> RenderedImage:
    """Dense uniform sampling of the union interval of every ray."""
    if num_samples < 1:
        raise SceneValidationError("num_samples must be positive")
    rays = generate_rays(camera)
    pixels = camera.num_pixels
    rgb = np.broadcast_to(scene.background_color, (pixels, 3)).copy()
    alpha = np.zeros(pixels)
    depth = np.zeros(pixels)

    for start in range(0, pixels, ORACLE_CHUNK):
        stop = min(start + ORACLE_CHUNK, pixels)
        origins, directions = rays.origins[start:stop], rays.directions[start:stop]
        hit, d_min, d_max = slab_intervals(origins, directions, scene)
        rows = np.flatnonzero(hit.any(axis=1)) if hit.size else np.zeros(0, dtype=np.int64)
        if rows.size == 0:
            continue
        lo = np.where(hit[rows], d_min[rows], np.inf).min(axis=1)
        hi = np.where(hit[rows], d_max[rows], -np.inf).max(axis=1)
        step = (hi - lo) / num_samples
        ts = lo[:, None] + (np.arange(num_samples)[None, :] + 0.5) * step[:, None]
        points = origins[rows, None, :] + ts[..., None] * directions[rows, None, :]
        flat = points.reshape(-1, 3)

        sigma = np.zeros(flat.shape[0])
        color_acc = np.zeros((flat.shape[0], 3))
        for column, obj in enumerate(scene.objects):
            p_obj = obj.pose.to_local(flat)
            inside = np.flatnonzero(obj.volume.contains(p_obj))
            if inside.size == 0:
                continue
            d_obj = np.repeat(directions[rows], num_samples, axis=0)[inside] @ obj.pose.rotation
            s, c = field.radiance(p_obj[inside], d_obj, np.full(inside.size, column, dtype=np.int64))
            s, c = np.asarray(s), np.asarray(c)
            sigma[inside] += s
            color_acc[inside] += s[:, None] * c
        color = np.where(sigma[:, None] > 0.0, color_acc / np.maximum(sigma, 1e-12)[:, None], 0.0)

        shape = (rows.size, num_samples)
        out_rgb, out_alpha, out_depth = composite(sigma.reshape(shape), color.reshape(shape + (3,)),
                                                  np.broadcast_to(step[:, None], shape), ts,
                                                  scene.background_color)
        index = start + rows
        rgb[index] = out_rgb
        alpha[index] = out_alpha
        depth[index] = out_depth

    valid = alpha >= DEPTH_VALID_ALPHA
    hw = (camera.height, camera.width)
    return RenderedImage(rgb.reshape(hw + (3,)), np.where(valid, depth, 0.0).reshape(hw),
                         alpha.reshape(hw), valid.reshape(hw))
