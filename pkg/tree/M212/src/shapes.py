"""
Analytic objects: signed-distance shapes with a density band and a colour function.

Density is sigma_max · clip(−sdf / band, 0, 1): zero outside the surface,
ramping to sigma_max one band-width inside. All coordinates are object-frame
meters; the bar, capsule and lobes run along x.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Sequence

import numpy as np

from shared.interfaces import RadianceField
from shared.types import SceneValidationError

SHAPES = ("box", "capsule", "waist_bar", "two_lobe")
DEFAULT_SIGMA_MAX = 400.0
DEFAULT_BAND = 0.005
VOLUME_MARGIN = 0.002
NORMAL_STEP = 1e-5

REQUIRED_PARAMS = {
    "box": ("hx", "hy", "hz"),
    "capsule": ("half_length", "radius"),
    "waist_bar": ("half_length", "end_radius", "waist_radius", "waist_width"),
    "two_lobe": ("offset", "radius_a", "radius_b"),
}


def _box_sdf(p, half):
    q = np.abs(p) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    return outside + np.minimum(np.max(q, axis=-1), 0.0)


def _capsule_sdf(p, half_length, radius):
    x = np.clip(p[..., 0], -half_length, half_length)
    closest = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=-1)
    return np.linalg.norm(p - closest, axis=-1) - radius


def _waist_radius(x, end_radius, waist_radius, waist_width):
    return end_radius - (end_radius - waist_radius) * np.exp(-(x / waist_width) ** 2)


def _waist_bar_sdf(p, half_length, end_radius, waist_radius, waist_width):
    radial = np.linalg.norm(p[..., 1:], axis=-1)
    side = radial - _waist_radius(p[..., 0], end_radius, waist_radius, waist_width)
    return np.maximum(side, np.abs(p[..., 0]) - half_length)


def _two_lobe_sdf(p, offset, radius_a, radius_b):
    ca = np.array([-offset, 0.0, 0.0])
    cb = np.array([offset, 0.0, 0.0])
    return np.minimum(np.linalg.norm(p - ca, axis=-1) - radius_a, np.linalg.norm(p - cb, axis=-1) - radius_b)


@dataclass(frozen=True, eq=False)
class AnalyticObject:
    """Procedural object with known geometry, density and colour."""
    shape: str
    params: Dict[str, float]
    base_color: np.ndarray
    sigma_max: float = DEFAULT_SIGMA_MAX
    band: float = DEFAULT_BAND
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SceneValidationError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        missing = [k for k in REQUIRED_PARAMS[self.shape] if k not in self.params]
        if missing:
            raise SceneValidationError(f"{self.shape} needs parameters {missing}")
        if any(float(self.params[k]) <= 0.0 for k in REQUIRED_PARAMS[self.shape]):
            raise SceneValidationError(f"{self.shape} parameters must be positive")
        color = np.array(self.base_color, dtype=np.float64)
        if color.shape != (3,) or np.any(color < 0.0) or np.any(color > 1.0):
            raise SceneValidationError("base_color must be an RGB triple in [0, 1]")
        if self.sigma_max <= 0.0 or self.band <= 0.0:
            raise SceneValidationError("sigma_max and band must be positive")
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "base_color", color)

    @property
    def support_half_extents(self) -> np.ndarray:
        """Tight half extents of the shape itself."""
        p = self.params
        if self.shape == "box":
            return np.array([p["hx"], p["hy"], p["hz"]])
        if self.shape == "capsule":
            r = p["radius"]
            return np.array([p["half_length"] + r, r, r])
        if self.shape == "waist_bar":
            r = max(p["end_radius"], p["waist_radius"])
            return np.array([p["half_length"], r, r])
        r = max(p["radius_a"], p["radius_b"])
        return np.array([p["offset"] + r, r, r])

    @property
    def half_extents(self) -> np.ndarray:
        """Bounding-volume half extents (support plus a small margin)."""
        return self.support_half_extents + VOLUME_MARGIN

    def sdf(self, p_obj: np.ndarray) -> np.ndarray:
        p = np.asarray(p_obj, dtype=np.float64)
        prm = self.params
        if self.shape == "box":
            return _box_sdf(p, np.array([prm["hx"], prm["hy"], prm["hz"]]))
        if self.shape == "capsule":
            return _capsule_sdf(p, prm["half_length"], prm["radius"])
        if self.shape == "waist_bar":
            return _waist_bar_sdf(p, prm["half_length"], prm["end_radius"], prm["waist_radius"], prm["waist_width"])
        return _two_lobe_sdf(p, prm["offset"], prm["radius_a"], prm["radius_b"])

    def density(self, p_obj: np.ndarray) -> np.ndarray:
        return self.sigma_max * np.clip(-self.sdf(p_obj) / self.band, 0.0, 1.0)

    def color(self, p_obj: np.ndarray) -> np.ndarray:
        """Base colour shaded from 60 % at the bottom to 100 % at the top of the support."""
        p = np.asarray(p_obj, dtype=np.float64)
        hz = self.support_half_extents[2]
        t = np.clip((p[..., 2] + hz) / (2.0 * hz), 0.0, 1.0)
        return self.base_color * (0.6 + 0.4 * t)[..., None]

    def normal(self, p_obj: np.ndarray) -> np.ndarray:
        """Outward unit normals from central differences of the sdf."""
        p = np.asarray(p_obj, dtype=np.float64)
        grad = np.empty(p.shape)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = NORMAL_STEP
            grad[..., axis] = (self.sdf(p + step) - self.sdf(p - step)) / (2.0 * NORMAL_STEP)
        norm = np.linalg.norm(grad, axis=-1, keepdims=True)
        return grad / np.maximum(norm, 1e-12)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shape": self.shape,
            "params": dict(self.params),
            "base_color": [float(c) for c in self.base_color],
            "sigma_max": float(self.sigma_max),
            "band": float(self.band),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AnalyticObject":
        return cls(data["shape"], dict(data["params"]), np.asarray(data["base_color"]),
                   float(data.get("sigma_max", DEFAULT_SIGMA_MAX)), float(data.get("band", DEFAULT_BAND)))


def random_object(rng: np.random.Generator, shapes: Sequence[str] = SHAPES) -> AnalyticObject:
    """Object from a random family with randomised dimensions and colour."""
    shape = str(rng.choice(list(shapes)))
    if shape == "box":
        params = dict(zip(("hx", "hy", "hz"), rng.uniform(0.02, 0.05, size=3)))
    elif shape == "capsule":
        params = {"half_length": rng.uniform(0.02, 0.05), "radius": rng.uniform(0.012, 0.025)}
    elif shape == "waist_bar":
        params = {"half_length": rng.uniform(0.05, 0.07), "end_radius": rng.uniform(0.03, 0.035),
                  "waist_radius": rng.uniform(0.010, 0.014), "waist_width": rng.uniform(0.025, 0.035)}
    else:
        params = {"offset": rng.uniform(0.02, 0.035), "radius_a": rng.uniform(0.025, 0.04),
                  "radius_b": rng.uniform(0.025, 0.04)}
    return AnalyticObject(shape, params, rng.uniform(0.15, 0.95, size=3))


def waist_bar_fixture() -> AnalyticObject:
    """Graspable bar: 3 cm waist at x = 0 between 7 cm wide ends."""
    return AnalyticObject("waist_bar", {"half_length": 0.07, "end_radius": 0.035, "waist_radius": 0.015,
                                        "waist_width": 0.03}, np.array([0.8, 0.5, 0.2]))


def boot_fixture() -> AnalyticObject:
    """Two wide lobes; too big for a 6 cm gripper almost everywhere."""
    return AnalyticObject("two_lobe", {"offset": 0.03, "radius_a": 0.04, "radius_b": 0.038},
                          np.array([0.3, 0.3, 0.7]))


def box_fixture(half: float = 0.05) -> AnalyticObject:
    return AnalyticObject("box", {"hx": half, "hy": half, "hz": half}, np.array([0.2, 0.7, 0.3]))


class AnalyticField(RadianceField):
    """Radiance field over analytic objects, one per scene column."""

    def __init__(self, objects: Sequence[AnalyticObject]):
        self.objects = list(objects)

    def _per_column(self, columns: np.ndarray, fn, width: int):
        columns = np.asarray(columns, dtype=np.int64)
        out = np.zeros((columns.size, width)) if width else np.zeros(columns.size)
        for column in np.unique(columns):
            rows = np.flatnonzero(columns == column)
            out[rows] = fn(self.objects[int(column)], rows)
        return out

    def density(self, p_obj, columns):
        p_obj = np.asarray(p_obj, dtype=np.float64)
        return self._per_column(columns, lambda obj, rows: obj.density(p_obj[rows]), 0)

    def radiance(self, p_obj, d_obj, columns):
        p_obj = np.asarray(p_obj, dtype=np.float64)
        sigma = self.density(p_obj, columns)
        color = self._per_column(columns, lambda obj, rows: obj.color(p_obj[rows]), 3)
        return sigma, color
