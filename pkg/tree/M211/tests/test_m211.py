"""
Unit tests for M211 - Trainer (Leaf Node)

Tests cover:
- RGB, grasp-score and grasp-rotation losses
- RMSprop updates
- Training configuration and finetune modes
- Pre-training on a one-object dataset
- Single-image inversion in all three modes
- Training log lines and divergence errors
"""
import numpy as np
import pytest
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import (
    BoundingVolume, Camera, GraspAnnotation, LatentCode, ObjectInstance, Pose, Scene, SceneValidationError,
)
from shared.utils.autodiff import ParameterStore
from tree.M121.src.main import LATENT_TABLE, Checkpoint, DecoderConfig, init_parameters
from tree.M211.src.losses import RMSprop, loss_grot, loss_gscore, loss_rgb, psnr_from_mse
from tree.M211.src.main import (
    FinetuneMode, StepRecord, TrainConfig, TrainingLog, create_node, finetune, initial_checkpoint, pretrain,
    render_image,
)
from tree.M212.src.oracle import oracle_render
from tree.M212.src.records import SceneDataset, SceneRecord, View
from tree.M212.src.shapes import AnalyticField, box_fixture

SMALL = DecoderConfig(latent_dim=4, hidden=8, num_layers=1, pos_freqs=1, dir_freqs=1, include_input=True, seed=0)
CAMERA = Camera.look_at([0.0, -1.0, 0.0], 6, 6, 8.0)
RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
FAST = {"epochs": 1, "steps_per_epoch": 3, "rays_per_batch": 8, "grasps_per_batch": 2, "num_samples": 4,
        "finetune_epochs": 2, "finetune_lr": 0.05, "log_every": 1, "progress": False, "seed": 3}


def layout() -> Scene:
    box = box_fixture()
    return Scene((ObjectInstance(0, Pose.identity(), BoundingVolume(box.half_extents), LatentCode.zeros(4)),))


@pytest.fixture(scope="module")
def dataset():
    box = box_fixture()
    scene = layout()
    image = oracle_render(scene, CAMERA, AnalyticField([box]), 32).rgb
    grasps = [GraspAnnotation(0, np.zeros(3), np.eye(3), 0.7), GraspAnnotation(0, np.zeros(3), RZ90, 0.2)]
    return SceneDataset([SceneRecord("scene_000", "train", scene, [box], [View(CAMERA, image)], grasps)])


@pytest.fixture
def checkpoint():
    return Checkpoint(SMALL, init_parameters(SMALL, 1, seed=0), {})


class TestLosses:
    """Loss functions."""

    def test_loss_rgb(self):
        assert loss_rgb(np.zeros((2, 3)), np.full((2, 3), 0.5)) == pytest.approx(0.25)

    def test_loss_rgb_shape_mismatch(self):
        with pytest.raises(SceneValidationError):
            loss_rgb(np.zeros((2, 3)), np.zeros((3, 3)))

    def test_gscore_is_asymmetric(self):
        """Over-prediction is scaled by lam, under-prediction is not."""
        assert loss_gscore(np.array([1.0]), np.array([0.0]), 0.1) == pytest.approx(0.1)
        assert loss_gscore(np.array([0.0]), np.array([1.0]), 0.1) == pytest.approx(1.0)
        assert loss_gscore(np.array([0.4]), np.array([0.4]), 0.1) == 0.0

    def test_grot_quarter_turn(self):
        loss = loss_grot(np.eye(3)[None], RZ90[None], np.array([1.0]))
        assert loss == pytest.approx(4.0 / 9.0)

    def test_grot_weighted_by_label_score(self):
        assert loss_grot(np.eye(3)[None], RZ90[None], np.array([0.0])) == 0.0
        assert loss_grot(np.eye(3)[None], RZ90[None], np.array([0.5])) == pytest.approx(2.0 / 9.0)

    def test_grot_needs_one_score_per_rotation(self):
        with pytest.raises(SceneValidationError):
            loss_grot(np.eye(3)[None], RZ90[None], np.array([1.0, 1.0]))

    def test_psnr_from_mse(self):
        assert psnr_from_mse(0.0) == float("inf")
        assert psnr_from_mse(0.01) == pytest.approx(20.0)


class TestRMSprop:
    def test_first_step(self):
        params = ParameterStore({"w": np.array([1.0]), "frozen": np.array([5.0])})
        optimizer = RMSprop(lr=0.01, decay=0.9, eps=1e-8)
        grads = {"w": np.array([2.0]), "frozen": np.array([1.0])}
        optimizer.step(params, grads, ["w"])
        expected = 1.0 - 0.01 * 2.0 / (np.sqrt(0.1 * 4.0) + 1e-8)
        np.testing.assert_allclose(params["w"], [expected])
        assert params["frozen"][0] == 5.0
        assert optimizer.steps == 1

    def test_invalid_settings(self):
        with pytest.raises(SceneValidationError):
            RMSprop(lr=0.0)
        with pytest.raises(SceneValidationError):
            RMSprop(decay=1.0)


class TestConfiguration:
    def test_defaults(self):
        config = TrainConfig.defaults()
        assert config.lam == 0.1
        assert config.rays_per_batch == 512

    def test_lam_range(self):
        for lam in (0.0, 1.0, 1.5):
            with pytest.raises(SceneValidationError):
                TrainConfig(lam=lam)

    def test_mode_aliases(self):
        assert FinetuneMode.parse("latent") is FinetuneMode.LATENT_ONLY
        assert FinetuneMode.parse("decoder") is FinetuneMode.DECODER_ONLY
        assert FinetuneMode.parse("both") is FinetuneMode.BOTH
        with pytest.raises(SceneValidationError):
            FinetuneMode.parse("everything")

    def test_step_line(self):
        line = StepRecord(7, 0.02, 0.01, 0.005, 0.005).to_line()
        assert line.startswith("step=7 ")
        assert "psnr=20.0000" in line


class TestPretrain:
    """Joint pre-training."""

    def test_updates_every_parameter(self, dataset, tmp_path):
        config = TrainConfig.from_dict(FAST)
        log = TrainingLog(tmp_path / "train.log")
        ckpt = pretrain(dataset, config, SMALL, log)
        initial = initial_checkpoint(dataset, config, SMALL)
        assert ckpt.num_latents == 1
        assert ckpt.extra["steps"] == 3
        assert ckpt.params.all_finite()
        for name in ckpt.params.names:
            assert not np.array_equal(ckpt.params[name], initial.params[name]), name
        rows = log.read(tmp_path / "train.log").data
        assert [row["step"] for row in rows] == [1.0, 2.0, 3.0]

    def test_deterministic(self, dataset):
        config = TrainConfig.from_dict(FAST)
        assert pretrain(dataset, config, SMALL).params.equals(pretrain(dataset, config, SMALL).params)

    def test_zero_steps_returns_initial(self, dataset):
        config = TrainConfig.from_dict({**FAST, "epochs": 0})
        ckpt = pretrain(dataset, config, SMALL)
        assert ckpt.params.equals(initial_checkpoint(dataset, config, SMALL).params)

    def test_needs_views(self):
        box = box_fixture()
        empty = SceneDataset([SceneRecord("s", "train", layout(), [box])])
        with pytest.raises(SceneValidationError):
            pretrain(empty, TrainConfig.from_dict(FAST), SMALL)

    def test_node_pretrain_with_decoder_overrides(self, dataset):
        result = create_node().process({"action": "pretrain", "dataset": dataset, "config": FAST,
                                        "decoder": SMALL.to_dict()})
        assert result.success
        assert result.data.config.hidden == 8


class TestFinetune:
    """Single-image inversion."""

    def target(self, checkpoint, latent=0.5):
        rgb = render_image(checkpoint.params, SMALL, np.full((1, 4), latent), layout(), CAMERA, 4)
        return rgb.reshape(6, 6, 3)

    def test_latent_only_keeps_decoder(self, checkpoint):
        before = checkpoint.params.copy()
        result = finetune(self.target(checkpoint), CAMERA, layout(), "latent_only", checkpoint,
                          TrainConfig.from_dict(FAST))
        assert result.checkpoint is checkpoint
        assert checkpoint.params.equals(before)
        assert list(result.latents) == [0]
        assert result.best_loss == min(result.epoch_losses)
        assert len(result.epoch_losses) == 3

    def test_best_iterate_scene(self, checkpoint):
        result = finetune(self.target(checkpoint), CAMERA, layout(), FinetuneMode.LATENT_ONLY, checkpoint,
                          TrainConfig.from_dict(FAST))
        scene = result.scene(layout())
        np.testing.assert_array_equal(scene.latent_matrix(), [result.latents[0].values])

    def test_decoder_only_keeps_random_latents(self, checkpoint):
        config = TrainConfig.from_dict(FAST)
        result = finetune(self.target(checkpoint), CAMERA, layout(), "decoder_only", checkpoint, config)
        drawn = np.random.default_rng(config.seed).normal(0.0, config.latent_init_std, size=(1, 4))
        np.testing.assert_array_equal(result.latents[0].values, drawn[0])
        assert result.checkpoint is not checkpoint
        np.testing.assert_array_equal(result.checkpoint.params[LATENT_TABLE], checkpoint.params[LATENT_TABLE])

    def test_both_modes_log_epochs(self, checkpoint, tmp_path):
        node = create_node()
        path = tmp_path / "invert.log"
        result = node.process({"action": "finetune", "image": self.target(checkpoint), "camera": CAMERA,
                               "layout": layout(), "mode": "both", "checkpoint": checkpoint, "config": FAST,
                               "log_path": str(path)})
        assert result.success
        rows = node.process({"action": "read_log", "path": str(path)}).data
        assert [row["event"] for row in rows] == ["invert", "invert"]
        assert rows[-1]["epoch"] == 2.0

    def test_image_shape_mismatch(self, checkpoint):
        with pytest.raises(SceneValidationError):
            finetune(np.zeros((5, 6, 3)), CAMERA, layout(), "latent_only", checkpoint, TrainConfig.from_dict(FAST))

    def test_empty_layout(self, checkpoint):
        with pytest.raises(SceneValidationError):
            finetune(np.zeros((6, 6, 3)), CAMERA, Scene(), "latent_only", checkpoint, TrainConfig.from_dict(FAST))

    def test_non_finite_target_diverges(self, checkpoint):
        """NaN targets surface as a training divergence, not a silent NaN checkpoint."""
        image = np.full((6, 6, 3), np.nan)
        result = create_node().process({"action": "finetune", "image": image, "camera": CAMERA,
                                        "layout": layout(), "checkpoint": checkpoint, "config": FAST})
        assert not result.success
        assert result.error_kind == "runtime"
        assert "non-finite" in result.error


class TestTrainerNode:
    """Test suite for TrainerNode (M211)."""

    def test_node_creation(self):
        node = create_node()
        assert node.node_id == "M211"
        assert node.interface_type == "training_log"

    def test_bad_config(self, dataset):
        result = create_node().process({"action": "pretrain", "dataset": dataset, "config": {"lam": 2.0}})
        assert result.error_kind == "validation"

    def test_unknown_action(self):
        assert not create_node().process({"action": "sing"}).success
