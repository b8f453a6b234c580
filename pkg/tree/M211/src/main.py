"""
M211 - Trainer
Leaf Node: pre-training over a dataset and single-image inversion

Pre-training jointly fits the decoders and one latent row per dataset object
to posed images (L_rgb) and grasp annotations (L_gscore + L_grot) with
RMSprop. Inversion fits latents (and optionally decoders) of a known layout
to one image through L_rgb only.
External Interface: append-only training log.
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    Camera, GraspAnnotation, LatentCode, LeafNode, NodeConfig, NodeLevel, NodeResult, NodeType, Scene,
    SceneValidationError, TrainingDivergedError,
)
from shared.interfaces import FileInterface, InterfaceResult, ensure_parent, file_size
from shared.utils import autodiff as ad
from shared.utils import get_logger
from shared.utils.autodiff import ArrayLike, ParameterStore, Tape, value_of
from shared.utils.config import dataclass_from_dict, node_defaults
from tree.M110.src.main import render_pixels
from tree.M121.src.main import (
    LATENT_TABLE, Checkpoint, DecoderConfig, NeuralField, decoder_names, grasp_forward, init_parameters,
)
from tree.M211.src.losses import RMSprop, loss_grot, loss_gscore, loss_rgb, psnr_from_mse
from tree.M212.src.records import SceneDataset, SceneRecord
from tree.M221.src.main import rotation_from_vectors

logger = get_logger("M211")


class FinetuneMode(Enum):
    LATENT_ONLY = "latent_only"
    DECODER_ONLY = "decoder_only"
    BOTH = "both"

    @classmethod
    def parse(cls, value) -> "FinetuneMode":
        if isinstance(value, cls):
            return value
        aliases = {"latent": "latent_only", "decoder": "decoder_only"}
        try:
            return cls(aliases.get(str(value), str(value)))
        except ValueError:
            raise SceneValidationError(f"unknown finetune mode {value!r}") from None


@dataclass
class TrainConfig:
    lam: float = 0.1
    lr: float = 1e-3
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    rays_per_batch: int = 512
    grasps_per_batch: int = 64
    num_samples: int = 32
    epochs: int = 20
    steps_per_epoch: int = 100
    finetune_epochs: int = 100
    finetune_lr: float = 1e-2
    latent_init_std: float = 0.1
    divergence_factor: float = 10.0
    divergence_patience: int = 100
    log_every: int = 10
    progress: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise SceneValidationError(f"lam must lie in (0, 1), got {self.lam}")
        for name in ("rays_per_batch", "num_samples", "log_every"):
            if getattr(self, name) < 1:
                raise SceneValidationError(f"{name} must be >= 1")
        for name in ("epochs", "steps_per_epoch", "finetune_epochs", "grasps_per_batch"):
            if getattr(self, name) < 0:
                raise SceneValidationError(f"{name} must be >= 0")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        return dataclass_from_dict(cls, data)

    def to_dict(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def defaults(cls) -> "TrainConfig":
        return cls.from_dict(node_defaults("M211"))


@dataclass
class StepRecord:
    step: int
    loss: float
    loss_rgb: float
    loss_gscore: float = 0.0
    loss_grot: float = 0.0

    @property
    def psnr(self) -> float:
        return psnr_from_mse(self.loss_rgb)

    def to_line(self) -> str:
        return (f"step={self.step} loss={self.loss:.6g} loss_rgb={self.loss_rgb:.6g} "
                f"loss_gscore={self.loss_gscore:.6g} loss_grot={self.loss_grot:.6g} psnr={self.psnr:.4f}")


@dataclass
class FinetuneResult:
    """Inverted latents per layout object id, the (possibly updated) checkpoint and the loss trace."""
    latents: Dict[int, LatentCode]
    checkpoint: Checkpoint
    best_loss: float
    best_epoch: int
    epoch_losses: List[float] = field(default_factory=list)

    def scene(self, layout: Scene) -> Scene:
        return layout.with_latents(self.latents)


class TrainingLog(FileInterface):
    """Append-only `key=value` lines, one per logged step."""

    def __init__(self, path: Optional[Path] = None):
        self.path = None if path is None else ensure_parent(path)

    def append(self, line: str) -> None:
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def read(self, path) -> InterfaceResult:
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                rows.append({k: float(v) if k != "event" else v
                             for k, v in (item.split("=", 1) for item in line.split())})
        return InterfaceResult(success=True, data=rows, bytes_transferred=file_size(path))

    def write(self, path, data: Any) -> InterfaceResult:
        with open(ensure_parent(path), "a", encoding="utf-8") as fh:
            for line in data:
                fh.write(line + "\n")
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


# -- batch loss --------------------------------------------------------------------

def grasp_loss(bound: Dict[str, ArrayLike], decoder: DecoderConfig, latents: ArrayLike,
               grasps: Sequence[GraspAnnotation], rows: np.ndarray, lam: float) -> Tuple[ArrayLike, ArrayLike]:
    """(L_gscore, L_grot) for annotations whose objects sit at `rows` of `latents`."""
    positions = np.stack([g.position for g in grasps])
    labels = np.stack([g.rotation for g in grasps])
    scores = np.array([g.score for g in grasps])
    out = grasp_forward(bound, decoder, ad.take_rows(latents, rows), positions)
    rotation = rotation_from_vectors(out.a, out.b_hat)
    return loss_gscore(out.score, scores, lam), loss_grot(rotation, labels, scores)


def batch_loss(bound: Dict[str, ArrayLike], decoder: DecoderConfig, latents: ArrayLike, scene: Scene,
               camera: Camera, pixels: np.ndarray, target: np.ndarray, num_samples: int, lam: float,
               grasps: Sequence[GraspAnnotation] = (), rng: Optional[np.random.Generator] = None):
    """Joint loss L_rgb + L_gscore + L_grot of one ray batch and one annotation batch.

    `latents` holds one row per scene object in list order. Returns the total
    and the three parts; all are tape values when anything in `bound` is.
    """
    field = NeuralField(bound, decoder, latents)
    rendered = render_pixels(scene, camera, pixels, field, num_samples, rng)
    l_rgb = loss_rgb(rendered, np.asarray(target, dtype=np.float64))
    if not grasps:
        return l_rgb, l_rgb, 0.0, 0.0
    column = {object_id: i for i, object_id in enumerate(scene.ids)}
    rows = np.array([column[g.object_id] for g in grasps], dtype=np.int64)
    l_gscore, l_grot = grasp_loss(bound, decoder, latents, grasps, rows, lam)
    return ad.add(ad.add(l_rgb, l_gscore), l_grot), l_rgb, l_gscore, l_grot


def _check_finite(record: StepRecord, grads: Dict[str, np.ndarray]) -> None:
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if not np.isfinite(record.loss) or bad:
        raise TrainingDivergedError(
            f"non-finite training state at step {record.step}: loss={record.loss} "
            f"loss_rgb={record.loss_rgb} loss_gscore={record.loss_gscore} loss_grot={record.loss_grot} "
            f"non-finite gradients={bad}")


# -- pre-training --------------------------------------------------------------------

def initial_checkpoint(dataset: SceneDataset, config: TrainConfig, decoder: DecoderConfig) -> Checkpoint:
    params = init_parameters(decoder, dataset.num_objects, config.seed, config.latent_init_std)
    return Checkpoint(decoder, params, {"train": config.to_dict(), "steps": 0})


def pretrain(dataset: SceneDataset, config: TrainConfig, decoder: Optional[DecoderConfig] = None,
             log: Optional[TrainingLog] = None) -> Checkpoint:
    """Fit decoders and the latent table to the training split with RMSprop."""
    decoder = DecoderConfig.defaults() if decoder is None else decoder
    train = [r for r in dataset.split("train").records if r.views]
    if not train:
        raise SceneValidationError("dataset has no training scene with views")
    checkpoint = initial_checkpoint(dataset, config, decoder)
    total_steps = config.epochs * config.steps_per_epoch
    if total_steps == 0:
        return checkpoint

    rng = np.random.default_rng(config.seed)
    params = checkpoint.params
    optimizer = RMSprop(config.lr, config.rms_decay, config.rms_eps)
    trainable = params.names
    log = log or TrainingLog()
    last: Optional[StepRecord] = None
    bar = tqdm(total=total_steps, desc="pretrain", disable=not config.progress, leave=False)
    for step in range(1, total_steps + 1):
        record = train[int(rng.integers(len(train)))]
        view = record.views[int(rng.integers(len(record.views)))]
        pixels = rng.integers(view.camera.num_pixels, size=config.rays_per_batch)
        target = view.image.reshape(-1, 3)[pixels]
        grasps: List[GraspAnnotation] = []
        if record.grasps and config.grasps_per_batch:
            picks = rng.integers(len(record.grasps), size=config.grasps_per_batch)
            grasps = [record.grasps[i] for i in picks]

        tape = Tape()
        bound = params.bind(tape, trainable)
        latents = ad.take_rows(bound[LATENT_TABLE], np.array(record.object_ids, dtype=np.int64))
        total, l_rgb, l_gscore, l_grot = batch_loss(bound, decoder, latents, record.scene, view.camera, pixels,
                                                    target, config.num_samples, config.lam, grasps, rng)
        last = StepRecord(step, float(value_of(total)), float(value_of(l_rgb)),
                          float(value_of(l_gscore)), float(value_of(l_grot)))
        grads = tape.backward(total) if isinstance(total, ad.Var) else params.zeros_like()
        _check_finite(last, grads)
        optimizer.step(params, grads)

        if step % config.log_every == 0 or step == total_steps:
            log.append(last.to_line())
            logger.debug(last.to_line())
            bar.set_postfix(loss=f"{last.loss:.4f}", psnr=f"{last.psnr:.2f}")
        bar.update(1)
    bar.close()

    checkpoint.extra.update({"steps": total_steps, "final_loss": last.loss if last else None})
    logger.info("pretrained %d steps on %d scenes, final loss %.5f", total_steps, len(train),
                last.loss if last else float("nan"))
    return checkpoint


# -- inversion -----------------------------------------------------------------------

def render_image(checkpoint_params: ParameterStore, decoder: DecoderConfig, latents: np.ndarray, scene: Scene,
                 camera: Camera, num_samples: int) -> np.ndarray:
    """Tape-free (H·W, 3) render with stratum-midpoint samples."""
    field = NeuralField(dict(checkpoint_params.items()), decoder, latents)
    return np.asarray(render_pixels(scene, camera, np.arange(camera.num_pixels), field, num_samples))


def finetune(image: np.ndarray, camera: Camera, layout: Scene, mode, checkpoint: Checkpoint,
             config: TrainConfig, log: Optional[TrainingLog] = None) -> FinetuneResult:
    """Fit one latent per layout object to a single image through L_rgb.

    Latents start from a seeded random draw. An epoch is one shuffled pass over
    all pixels; after each epoch the full image is scored with midpoint samples
    and the best iterate is kept. In decoder_only mode the random latents are
    drawn once and never optimised. The input checkpoint is never modified.
    """
    mode = FinetuneMode.parse(mode)
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (camera.height, camera.width, 3):
        raise SceneValidationError(f"image shape {image.shape} does not match the camera")
    if len(layout) == 0:
        raise SceneValidationError("inversion needs at least one layout object")
    decoder = checkpoint.config
    rng = np.random.default_rng(config.seed)

    arrays = {name: checkpoint.params[name].copy() for name in decoder_names(decoder)}
    arrays[LATENT_TABLE] = rng.normal(0.0, config.latent_init_std, size=(len(layout), decoder.latent_dim))
    params = ParameterStore(arrays)
    trainable = {
        FinetuneMode.LATENT_ONLY: [LATENT_TABLE],
        FinetuneMode.DECODER_ONLY: decoder_names(decoder),
        FinetuneMode.BOTH: decoder_names(decoder) + [LATENT_TABLE],
    }[mode]
    optimizer = RMSprop(config.finetune_lr, config.rms_decay, config.rms_eps)
    target = image.reshape(-1, 3)
    log = log or TrainingLog()

    def evaluate() -> float:
        rendered = render_image(params, decoder, params[LATENT_TABLE], layout, camera, config.num_samples)
        return float(np.mean((rendered - target) ** 2))

    best_loss = evaluate()
    best = params.copy()
    best_epoch = 0
    epoch_losses = [best_loss]
    initial_loss: Optional[float] = None
    over_count = 0
    step = 0
    batch = min(config.rays_per_batch, camera.num_pixels)
    bar = tqdm(total=config.finetune_epochs, desc=f"invert[{mode.value}]", disable=not config.progress, leave=False)
    for epoch in range(1, config.finetune_epochs + 1):
        order = rng.permutation(camera.num_pixels)
        for start in range(0, order.size, batch):
            pixels = order[start:start + batch]
            tape = Tape()
            bound = params.bind(tape, trainable)
            loss, _, _, _ = batch_loss(bound, decoder, bound[LATENT_TABLE], layout, camera, pixels,
                                       target[pixels], config.num_samples, config.lam, (), rng)
            step += 1
            value = float(value_of(loss))
            grads = tape.backward(loss) if isinstance(loss, ad.Var) else {n: np.zeros_like(params[n]) for n in trainable}
            _check_finite(StepRecord(step, value, value), grads)
            if initial_loss is None:
                initial_loss = value
            over_count = over_count + 1 if value > config.divergence_factor * initial_loss else 0
            if over_count >= config.divergence_patience:
                raise TrainingDivergedError(
                    f"inversion diverged: loss {value:.4g} above {config.divergence_factor}x the initial "
                    f"{initial_loss:.4g} for {over_count} consecutive steps")
            optimizer.step(params, grads, trainable)

        epoch_loss = evaluate()
        epoch_losses.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss, best, best_epoch = epoch_loss, params.copy(), epoch
        log.append(f"event=invert epoch={epoch} loss_rgb={epoch_loss:.6g} psnr={psnr_from_mse(epoch_loss):.4f}")
        bar.set_postfix(psnr=f"{psnr_from_mse(epoch_loss):.2f}")
        bar.update(1)
    bar.close()

    latents = {obj.id: LatentCode(best[LATENT_TABLE][i]) for i, obj in enumerate(layout.objects)}
    if mode is FinetuneMode.LATENT_ONLY:
        result_checkpoint = checkpoint
    else:
        updated = checkpoint.params.copy()
        for name in decoder_names(decoder):
            updated.set(name, best[name])
        result_checkpoint = Checkpoint(decoder, updated, dict(checkpoint.extra))
    logger.info("inversion (%s): best PSNR %.2f dB at epoch %d", mode.value, psnr_from_mse(best_loss), best_epoch)
    return FinetuneResult(latents, result_checkpoint, best_loss, best_epoch, epoch_losses)


class TrainerNode(LeafNode):
    """
    M211 - Trainer Leaf Node

    Responsibility: pre-training and single-image inversion
    External Interface: training log (append-only text)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M211",
            name="Trainer",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M210",
            metadata={"interface": "training_log", "file_types": [".log"]},
        )
        super().__init__(config)
        self._interface_type = "training_log"
        self.defaults = TrainConfig.defaults()

    def _config(self, overrides: Optional[Dict[str, Any]]) -> TrainConfig:
        if isinstance(overrides, TrainConfig):
            return overrides
        return TrainConfig.from_dict({**self.defaults.to_dict(), **(overrides or {})})

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "pretrain" | "finetune" | "read_log",
            "dataset": SceneDataset, "decoder": DecoderConfig fields,   # pretrain
            "image": (H, W, 3), "camera": Camera, "layout": Scene,
            "mode": "latent_only" | "decoder_only" | "both", "checkpoint": Checkpoint,   # finetune
            "config": TrainConfig fields, "log_path": str
        }
        """
        action = input_data.get("action", "pretrain")
        try:
            config = self._config(input_data.get("config"))
            log_path = input_data.get("log_path")
            log = TrainingLog(Path(log_path)) if log_path else None
            if action == "pretrain":
                decoder = input_data.get("decoder")
                if decoder is not None and not isinstance(decoder, DecoderConfig):
                    decoder = DecoderConfig.from_dict({**DecoderConfig.defaults().to_dict(), **decoder})
                data = pretrain(input_data["dataset"], config, decoder, log)
            elif action == "finetune":
                data = finetune(input_data["image"], input_data["camera"], input_data["layout"],
                                input_data.get("mode", "latent_only"), input_data["checkpoint"], config, log)
            elif action == "read_log":
                data = TrainingLog().read(input_data["path"]).data
            else:
                return self.unknown_action(action)
            return NodeResult(success=True, data=data, node_id=self.node_id)
        except Exception as exc:
            logger.error("training %s failed: %s", action, exc)
            return NodeResult.failure(exc, self.node_id)


# Factory function
def create_node() -> TrainerNode:
    """Create and return M211 node instance."""
    return TrainerNode()
