"""
Unit tests for M000 - Scene Orchestrator (Root Node)

Tests cover:
- Tree structure, status and request routing
- End-to-end workflows on a tiny generated dataset
- Write-once outputs
- Seeded bench latents, including an empty latent table
- Command-line parsing, manifests and exit codes
"""
import numpy as np
import pytest
import yaml
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import Camera, SceneValidationError
from tree.M000.src.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, build_parser, run, sha256_of
from tree.M000.src.main import WORKFLOWS, bench_latent, build_tree, create_node
from tree.M121.src.main import Checkpoint, DecoderConfig, init_parameters
from tree.M212.src.storage import read_depth, write_png

TINY = {"num_objects": 1, "num_test_objects": 0, "num_views": 1, "num_grasps": 2, "width": 6, "height": 6,
        "oracle_samples": 16, "grasp_trials": 3, "shapes": ["box"], "seed": 4}
FAST = {"epochs": 1, "steps_per_epoch": 2, "rays_per_batch": 8, "grasps_per_batch": 2, "num_samples": 4,
        "finetune_epochs": 1, "progress": False}
DECODER = {"latent_dim": 3, "hidden": 8, "num_layers": 1, "pos_freqs": 1, "dir_freqs": 1}
CAMERA = Camera.look_at([0.0, -1.0, 0.0], 6, 6, 12.0)
LEAVES = ["M111", "M112", "M121", "M122", "M211", "M212", "M221", "M222"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Dataset and checkpoint shared by the workflow tests."""
    base = tmp_path_factory.mktemp("workflows")
    root = create_node()
    root.run_workflow("gen_data", out=base / "data", config=TINY)
    dataset = base / "data" / "dataset"
    root.run_workflow("pretrain", out=base / "train", dataset=dataset, config=FAST, decoder=DECODER)
    return {
        "checkpoint": base / "train" / "model.ckpt",
        "layout": dataset / "scene_000" / "layout.yaml",
        "image": dataset / "scene_000" / "images" / "view_000.png",
        "cameras": dataset / "scene_000" / "cameras.txt",
        "dataset": dataset,
    }


def write_pair(tmp_path, second=0.5):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    write_png(a, np.full((12, 12, 3), 0.5))
    write_png(b, np.full((12, 12, 3), second))
    return a, b


@pytest.mark.slow
class TestWorkflows:
    """End-to-end workflows."""

    def test_dataset_and_checkpoint(self, trained):
        assert (trained["dataset"] / "dataset.yaml").exists()
        assert trained["checkpoint"].exists()
        assert (trained["checkpoint"].parent / "train.log").exists()

    def test_render(self, trained, tmp_path):
        root = create_node()
        data = root.run_workflow("render", out=tmp_path, checkpoint=trained["checkpoint"], layout=trained["layout"],
                                 camera=CAMERA, num_samples=4)
        assert (tmp_path / "render.png").exists()
        assert 0.0 <= data["coverage"] <= 1.0
        assert root.history[-1].name == "render"

    def test_render_depth_with_table_latents(self, trained, tmp_path):
        create_node().run_workflow("render_depth", out=tmp_path, checkpoint=trained["checkpoint"],
                                   layout=trained["layout"], camera=CAMERA, num_samples=4, use_table=True)
        with open(tmp_path / "depth.nsdr", "rb") as fh:
            depth, valid = read_depth(fh)
        assert depth.shape == (6, 6)
        assert np.all(depth[~valid] == 0.0)

    def test_render_graspfield(self, trained, tmp_path):
        data = create_node().run_workflow("render_graspfield", out=tmp_path, checkpoint=trained["checkpoint"],
                                          layout=trained["layout"], camera=CAMERA, num_samples=4)
        assert data["outputs"] == [tmp_path / "graspfield.png"]

    def test_grasp(self, trained, tmp_path):
        data = create_node().run_workflow("grasp", out=tmp_path, checkpoint=trained["checkpoint"],
                                          layout=trained["layout"], config={"res": 2, "top_k": 2})
        assert data["objects"][0]["proposals"] == 2
        lines = (tmp_path / "grasps_object_0000.txt").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3

    def test_voxelize(self, trained, tmp_path):
        data = create_node().run_workflow("voxelize", out=tmp_path, checkpoint=trained["checkpoint"],
                                          layout=trained["layout"], object_id=0, res=4, threshold=1e-3, dense=True)
        assert data["res"] == 4
        assert (tmp_path / "voxels_object_0000.vox").exists()

    def test_voxelize_unknown_object(self, trained, tmp_path):
        with pytest.raises(SceneValidationError):
            create_node().run_workflow("voxelize", out=tmp_path, checkpoint=trained["checkpoint"],
                                       layout=trained["layout"], object_id=9)

    def test_invert_latent_only(self, trained, tmp_path):
        root = create_node()
        camera = root.camera_from_file(trained["cameras"])
        data = root.run_workflow("invert", out=tmp_path, checkpoint=trained["checkpoint"], image=trained["image"],
                                 layout=trained["layout"], camera=camera, config=FAST, num_samples=4)
        assert data["epochs"] == 2
        assert (tmp_path / "latents" / "object_0000.txt").exists()
        assert (tmp_path / "layout.yaml").exists()
        assert (tmp_path / "render.png").exists()
        assert not (tmp_path / "model.ckpt").exists()

    def test_invert_both_writes_checkpoint(self, trained, tmp_path):
        root = create_node()
        root.run_workflow("invert", out=tmp_path, checkpoint=trained["checkpoint"], image=trained["image"],
                          layout=trained["layout"], camera=root.camera_from_file(trained["cameras"]), mode="both",
                          config=FAST, num_samples=4)
        assert (tmp_path / "model.ckpt").exists()

    def test_camera_view_out_of_range(self, trained):
        with pytest.raises(SceneValidationError):
            create_node().camera_from_file(trained["cameras"], view=5)

    def test_evaluate(self, tmp_path):
        a, b = write_pair(tmp_path, second=0.0)
        data = create_node().run_workflow("evaluate", out=tmp_path / "out", image_a=a, image_b=b)
        assert data["exact_match"] is False
        assert data["psnr"] == pytest.approx(-20.0 * np.log10(128 / 255))

    def test_outputs_are_write_once(self, tmp_path):
        a, b = write_pair(tmp_path)
        root = create_node()
        root.run_workflow("evaluate", out=tmp_path / "out", image_a=a, image_b=b)
        with pytest.raises(SceneValidationError):
            root.run_workflow("evaluate", out=tmp_path / "out", image_a=a, image_b=b)

    def test_bench(self, tmp_path):
        data = create_node().run_workflow("bench", out=tmp_path, size=4, num_samples=2, repeats=2)
        assert len(data["runs_ms"]) == 2
        assert data["ms_min"] <= data["ms_mean"]
        assert data["seed"] == 0

    def test_bench_latent_empty_table(self):
        config = DecoderConfig(**DECODER)
        empty = Checkpoint(config, init_parameters(config, num_latents=0))
        latent = bench_latent(empty, 5)
        assert latent.shape == (3,)
        assert np.array_equal(latent, bench_latent(empty, 5))
        assert not np.array_equal(latent, bench_latent(empty, 6))

    def test_bench_latent_seeded_row(self):
        config = DecoderConfig(**DECODER)
        ckpt = Checkpoint(config, init_parameters(config, num_latents=4))
        rows = [ckpt.latent(i) for i in range(4)]
        for seed in range(5):
            latent = bench_latent(ckpt, seed)
            assert any(np.array_equal(latent, row) for row in rows)
            assert np.array_equal(latent, bench_latent(ckpt, seed))

    def test_workflow_through_process(self, tmp_path):
        a, b = write_pair(tmp_path)
        result = create_node().process({"action": "evaluate",
                                        "params": {"out": tmp_path / "out", "image_a": a, "image_b": b}})
        assert result.success
        assert result.data["psnr"] == float("inf")

    def test_all_workflows_callable(self):
        root = create_node()
        assert all(callable(getattr(root, name)) for name in WORKFLOWS)


class TestCli:
    """Command-line entry point."""

    def test_eval_identical_pair(self, tmp_path):
        a, b = write_pair(tmp_path)
        out = tmp_path / "run"
        assert run(["eval", str(a), str(b), "--out", str(out)]) == EXIT_OK
        manifest = yaml.safe_load((out / "manifest.yaml").read_text(encoding="utf-8"))
        assert manifest["command"] == "eval"
        assert manifest["results"]["exact_match"] is True
        assert manifest["results"]["psnr"] == float("inf")
        assert manifest["inputs"][str(a)] == sha256_of(a)
        metrics = yaml.safe_load((out / "metrics.yaml").read_text(encoding="utf-8"))
        assert metrics["ssim"] == pytest.approx(1.0)

    def test_finished_run_is_not_overwritten(self, tmp_path):
        a, b = write_pair(tmp_path)
        out = tmp_path / "run"
        assert run(["eval", str(a), str(b), "--out", str(out)]) == EXIT_OK
        assert run(["eval", str(a), str(b), "--out", str(out)]) == EXIT_VALIDATION

    def test_missing_input(self, tmp_path):
        a, _ = write_pair(tmp_path)
        assert run(["eval", str(a), str(tmp_path / "none.png"), "--out", str(tmp_path / "run")]) == EXIT_VALIDATION
        assert not (tmp_path / "run").exists()

    def test_bad_flags(self, tmp_path):
        assert run(["render", "--out", str(tmp_path)]) == EXIT_VALIDATION
        assert run(["fly", "--out", str(tmp_path)]) == EXIT_VALIDATION
        assert run(["bench", "--out", str(tmp_path), "--threads", "0"]) == EXIT_VALIDATION

    def test_camera_flags_exclusive(self, trained, tmp_path):
        argv = ["render", "--out", str(tmp_path / "run"), "--checkpoint", str(trained["checkpoint"]),
                "--layout", str(trained["layout"]), "--cameras", str(trained["cameras"]), "--eye", "0", "-1", "0"]
        assert run(argv) == EXIT_VALIDATION

    def test_render_with_settings_file(self, trained, tmp_path):
        settings = tmp_path / "settings.yaml"
        settings.write_text("render:\n  num_samples: 3\n", encoding="utf-8")
        out = tmp_path / "run"
        argv = ["render", "--out", str(out), "--checkpoint", str(trained["checkpoint"]), "--layout",
                str(trained["layout"]), "--eye", "0", "-1", "0", "--size", "5", "4", "--config", str(settings)]
        assert run(argv) == EXIT_OK
        manifest = yaml.safe_load((out / "manifest.yaml").read_text(encoding="utf-8"))
        assert manifest["config"]["render"]["num_samples"] == 3

    def test_bench_seed_from_settings(self, tmp_path):
        settings = tmp_path / "settings.yaml"
        settings.write_text("decoder:\n  seed: 7\n", encoding="utf-8")
        out = tmp_path / "run"
        argv = ["bench", "--out", str(out), "--size", "3", "--num-samples", "2", "--repeats", "1",
                "--config", str(settings)]
        assert run(argv) == EXIT_OK
        report = yaml.safe_load((out / "bench.yaml").read_text(encoding="utf-8"))
        assert report["seed"] == 7

    def test_corrupt_checkpoint_is_runtime_failure(self, trained, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NSCK\x01")
        argv = ["render", "--out", str(tmp_path / "run"), "--checkpoint", str(bad), "--layout",
                str(trained["layout"]), "--eye", "0", "-1", "0"]
        assert run(argv) == EXIT_RUNTIME

    def test_gen_data_flags(self, tmp_path):
        out = tmp_path / "run"
        argv = ["gen-data", "--out", str(out), "--num-objects", "1", "--num-test-objects", "0", "--num-views", "1",
                "--num-grasps", "1", "--size", "4", "4", "--seed", "2"]
        assert run(argv) == EXIT_OK
        manifest = yaml.safe_load((out / "manifest.yaml").read_text(encoding="utf-8"))
        assert manifest["config"]["dataset"]["seed"] == 2
        assert manifest["results"]["objects"] == 1

    def test_parser_lists_every_command(self):
        parser = build_parser()
        args = parser.parse_args(["voxelize", "--out", "x", "--checkpoint", "c", "--layout", "l", "--dense"])
        assert args.dense and args.object is None


class TestSceneOrchestratorNode:
    """Test suite for SceneOrchestratorNode (M000)."""

    def test_node_creation(self):
        node = create_node()
        assert node.node_id == "M000"
        assert not node.is_leaf
        assert node.config.level.name == "ROOT"
        assert node.left.node_id == "M100"
        assert node.right.node_id == "M200"

    def test_leaves(self):
        leaves = build_tree()._collect_all_leaves()
        assert sorted(leaf.node_id for leaf in leaves) == LEAVES

    def test_threads_reach_leaves(self):
        node = create_node(threads=3)
        assert all(leaf.threads == 3 for leaf in node._collect_all_leaves())

    def test_status(self):
        data = create_node().process({"action": "status"}).data
        assert sorted(data["leaf_nodes"]) == LEAVES
        assert data["workflow_count"] == 0

    def test_route_request(self):
        image = np.zeros((12, 12, 3))
        result = create_node().process({"action": "route_request", "target": "M000.M200.M210.M212",
                                        "request": {"action": "metrics", "a": image, "b": image}})
        assert result.success
        assert result.data["exact_match"]

    def test_route_to_unknown_node(self):
        result = create_node().process({"action": "route_request", "target": "M300"})
        assert result.error_kind == "validation"

    def test_unknown_workflow(self):
        with pytest.raises(SceneValidationError):
            create_node().run_workflow("paint", out=".")
