"""
M121 - Decoder Networks
Leaf Node: radiance and grasp decoders over a shared backbone

Both decoders read the positional encoding of an object-frame point
concatenated with the object's latent code through the same two backbone
layers. The radiance path adds a view-independent density head and a colour
head fed with the encoded view direction; the grasp path adds one head
emitting a score logit and the raw vectors a, b̂.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import LeafNode, NodeConfig, NodeLevel, NodeResult, NodeType, SceneValidationError
from shared.interfaces import GraspField, RadianceField
from shared.utils import autodiff as ad
from shared.utils import get_logger
from shared.utils.autodiff import ArrayLike, ParameterStore, value_of
from shared.utils.config import dataclass_from_dict, node_defaults

logger = get_logger("M121")

LATENT_TABLE = "latents"
GRASP_OUTPUTS = 7


@dataclass
class DecoderConfig:
    """Widths, latent size and encoding frequencies; all go into checkpoint headers."""
    latent_dim: int = 32
    hidden: int = 64
    num_layers: int = 2
    pos_freqs: int = 6
    dir_freqs: int = 2
    include_input: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "hidden", "num_layers", "pos_freqs", "dir_freqs"):
            if getattr(self, name) < 1:
                raise SceneValidationError(f"{name} must be >= 1")

    @property
    def pos_dim(self) -> int:
        return encoding_size(self.pos_freqs, self.include_input)

    @property
    def dir_dim(self) -> int:
        return encoding_size(self.dir_freqs, self.include_input)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DecoderConfig":
        return dataclass_from_dict(cls, data)

    def to_dict(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def defaults(cls) -> "DecoderConfig":
        return cls.from_dict(node_defaults("M121"))


@dataclass(frozen=True, eq=False)
class RadianceOutput:
    sigma: ArrayLike
    color: ArrayLike


@dataclass(frozen=True, eq=False)
class GraspOutput:
    score: ArrayLike
    a: ArrayLike
    b_hat: ArrayLike


@dataclass(eq=False)
class Checkpoint:
    """Decoder weights plus latent table and the configuration that built them."""
    config: DecoderConfig
    params: ParameterStore
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_latents(self) -> int:
        return int(self.params[LATENT_TABLE].shape[0])

    def latent(self, row: int) -> np.ndarray:
        table = self.params[LATENT_TABLE]
        if not 0 <= row < table.shape[0]:
            raise SceneValidationError(f"latent row {row} outside table of {table.shape[0]}")
        return table[row].copy()

    def copy(self) -> "Checkpoint":
        return Checkpoint(DecoderConfig(**self.config.to_dict()), self.params.copy(), dict(self.extra))


def encoding_size(num_freqs: int, include_input: bool = True) -> int:
    return 3 * 2 * num_freqs + (3 if include_input else 0)


def positional_encode(p: ArrayLike, num_freqs: int, include_input: bool = True) -> ArrayLike:
    """[p, sin(2^0 π p), cos(2^0 π p), ..., sin(2^(L-1) π p), cos(2^(L-1) π p)] along the last axis."""
    if num_freqs < 1:
        raise SceneValidationError("num_freqs must be >= 1")
    parts = [p] if include_input else []
    for k in range(num_freqs):
        scaled = ad.mul(p, (2.0 ** k) * np.pi)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    return ad.concat(parts, axis=-1)


def decoder_parameter_shapes(config: DecoderConfig) -> Dict[str, tuple]:
    shapes: Dict[str, tuple] = {}
    fan_in = config.pos_dim + config.latent_dim
    for layer in range(config.num_layers):
        shapes[f"backbone.{layer}.weight"] = (fan_in, config.hidden)
        shapes[f"backbone.{layer}.bias"] = (config.hidden,)
        fan_in = config.hidden
    shapes["sigma.weight"] = (config.hidden, 1)
    shapes["sigma.bias"] = (1,)
    shapes["color.weight"] = (config.hidden + config.dir_dim, 3)
    shapes["color.bias"] = (3,)
    shapes["grasp.weight"] = (config.hidden, GRASP_OUTPUTS)
    shapes["grasp.bias"] = (GRASP_OUTPUTS,)
    return shapes


def decoder_names(config: DecoderConfig) -> list:
    return list(decoder_parameter_shapes(config))


def init_parameters(config: DecoderConfig, num_latents: int, seed: Optional[int] = None,
                    latent_std: float = 0.1) -> ParameterStore:
    """Seeded uniform fan-in initialisation; σ-head bias starts at zero."""
    if num_latents < 0:
        raise SceneValidationError("num_latents must be non-negative")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in decoder_parameter_shapes(config).items():
        if name.endswith(".weight"):
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        elif name == "sigma.bias":
            arrays[name] = np.zeros(shape)
        else:
            fan_in = decoder_parameter_shapes(config)[name.replace(".bias", ".weight")][0]
            bound = 1.0 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    arrays[LATENT_TABLE] = rng.normal(0.0, latent_std, size=(num_latents, config.latent_dim))
    return ParameterStore(arrays)


def parameter_count(config: DecoderConfig) -> Dict[str, int]:
    """Exact parameter counts per decoder path (latent table excluded)."""
    sizes = {name: int(np.prod(shape)) for name, shape in decoder_parameter_shapes(config).items()}
    backbone = sum(v for k, v in sizes.items() if k.startswith("backbone."))
    radiance = backbone + sum(v for k, v in sizes.items() if k.startswith(("sigma.", "color.")))
    grasp_head = sum(v for k, v in sizes.items() if k.startswith("grasp."))
    return {
        "backbone": backbone,
        "radiance": radiance,
        "grasp_head": grasp_head,
        "grasp": backbone + grasp_head,
        "total": radiance + grasp_head,
        "latent_per_object": config.latent_dim,
    }


def _linear(x: ArrayLike, params: Dict[str, ArrayLike], prefix: str) -> ArrayLike:
    return ad.add(ad.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _check_latents(latents: ArrayLike, config: DecoderConfig) -> None:
    values = value_of(latents)
    if values.ndim != 2 or values.shape[1] != config.latent_dim:
        raise SceneValidationError(f"latents must have shape (S, {config.latent_dim}), got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise SceneValidationError("latent code must be finite")


def backbone(params: Dict[str, ArrayLike], config: DecoderConfig, latents: ArrayLike, p_obj: ArrayLike) -> ArrayLike:
    """Shared trunk features for (S, 3) points and (S, D) per-point latents."""
    _check_latents(latents, config)
    x = ad.concat([positional_encode(p_obj, config.pos_freqs, config.include_input), latents], axis=-1)
    for layer in range(config.num_layers):
        x = ad.relu(_linear(x, params, f"backbone.{layer}"))
    return x


def density_forward(params: Dict[str, ArrayLike], config: DecoderConfig, latents: ArrayLike,
                    p_obj: ArrayLike) -> ArrayLike:
    """(S,) densities; skips the colour head."""
    h = backbone(params, config, latents, p_obj)
    return ad.reshape(ad.softplus(_linear(h, params, "sigma")), (-1,))


def radiance_forward(params: Dict[str, ArrayLike], config: DecoderConfig, latents: ArrayLike,
                     p_obj: ArrayLike, d_obj: ArrayLike) -> RadianceOutput:
    """Density from the trunk alone, colour from trunk plus encoded view direction."""
    h = backbone(params, config, latents, p_obj)
    sigma = ad.reshape(ad.softplus(_linear(h, params, "sigma")), (-1,))
    view = positional_encode(d_obj, config.dir_freqs, config.include_input)
    color = ad.sigmoid(_linear(ad.concat([h, view], axis=-1), params, "color"))
    return RadianceOutput(sigma, color)


def grasp_forward(params: Dict[str, ArrayLike], config: DecoderConfig, latents: ArrayLike,
                  p_obj: ArrayLike) -> GraspOutput:
    h = backbone(params, config, latents, p_obj)
    out = _linear(h, params, "grasp")
    score = ad.reshape(ad.sigmoid(ad.getitem(out, (slice(None), slice(0, 1)))), (-1,))
    return GraspOutput(score, ad.getitem(out, (slice(None), slice(1, 4))), ad.getitem(out, (slice(None), slice(4, 7))))


class NeuralField(RadianceField, GraspField):
    """Decoders bound to one scene's latent rows.

    `params` may hold tape values (training) or arrays; `latents` is the
    (M, D) matrix of the scene's objects in list order.
    """

    def __init__(self, params: Dict[str, ArrayLike], config: DecoderConfig, latents: ArrayLike):
        _check_latents(latents, config)
        self.params = params
        self.config = config
        self.latents = latents

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, latents: np.ndarray) -> "NeuralField":
        return cls(dict(checkpoint.params.items()), checkpoint.config, np.asarray(latents, dtype=np.float64))

    @property
    def is_differentiable(self) -> bool:
        values = list(self.params.values()) + [self.latents]
        return any(isinstance(v, ad.Var) for v in values)

    def _rows(self, columns: np.ndarray) -> ArrayLike:
        return ad.take_rows(self.latents, np.asarray(columns, dtype=np.int64))

    def density(self, p_obj, columns):
        return density_forward(self.params, self.config, self._rows(columns), p_obj)

    def radiance(self, p_obj, d_obj, columns):
        out = radiance_forward(self.params, self.config, self._rows(columns), p_obj, d_obj)
        return out.sigma, out.color

    def grasp(self, p_obj, columns):
        out = grasp_forward(self.params, self.config, self._rows(columns), p_obj)
        return out.score, out.a, out.b_hat


class DecoderNode(LeafNode):
    """
    M121 - Decoder Networks Leaf Node

    Responsibility: parameter initialisation, forward passes, parameter counts
    External Interface: none (weights reach disk through M122)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M121",
            name="Decoder Networks",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M120",
            metadata={"interface": "in_memory"},
        )
        super().__init__(config)
        self._interface_type = "in_memory"

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "init" | "param_count" | "radiance" | "grasp",
            "decoder": dict of DecoderConfig fields (optional),
            "num_latents": int, "seed": int,            # init
            "checkpoint": Checkpoint, "latents": (S, D), "points": (S, 3), "dirs": (S, 3)
        }
        """
        action = input_data.get("action", "param_count")
        try:
            if action in ("init", "param_count"):
                decoder = input_data.get("decoder")
                config = DecoderConfig.defaults() if decoder is None else DecoderConfig.from_dict(decoder)
                if action == "param_count":
                    return NodeResult(success=True, data=parameter_count(config), node_id=self.node_id)
                params = init_parameters(config, int(input_data.get("num_latents", 0)), input_data.get("seed"))
                logger.info("initialised decoders with %d parameters", params.num_parameters())
                return NodeResult(success=True, data=Checkpoint(config, params), node_id=self.node_id)
            if action in ("radiance", "grasp"):
                ckpt: Checkpoint = input_data["checkpoint"]
                bound = dict(ckpt.params.items())
                latents = np.asarray(input_data["latents"], dtype=np.float64)
                points = np.asarray(input_data["points"], dtype=np.float64)
                if action == "radiance":
                    data = radiance_forward(bound, ckpt.config, latents, points, input_data["dirs"])
                else:
                    data = grasp_forward(bound, ckpt.config, latents, points)
                return NodeResult(success=True, data=data, node_id=self.node_id)
            return self.unknown_action(action)
        except Exception as exc:
            logger.error("decoder %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)


# Factory function
def create_node() -> DecoderNode:
    """Create and return M121 node instance."""
    return DecoderNode()
