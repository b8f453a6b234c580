"""
Command-line entry point.

    neural-scene <command> --out DIR [--seed N] [--threads N] [--config FILE] [flags]

Commands map one-to-one onto SceneOrchestratorNode workflows. A YAML settings
file may hold one section per concern (dataset, train, decoder, render, grasp,
voxel); command-line flags override it. The merged effective configuration,
seed, git revision and input hashes are written to <out>/manifest.yaml.

Exit codes: 0 success, 1 validation error (bad flags or inputs), 2 runtime failure.
"""
import argparse
import hashlib
import subprocess
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import Camera, CliValidationError, SceneValidationError
from shared.utils import configure_logging, get_logger
from shared.utils.config import PROJECT_ROOT, load_settings, merge_overrides, node_defaults

from tree.M000.src.main import create_node
from tree.M121.src.main import DecoderConfig
from tree.M211.src.main import FinetuneMode, TrainConfig
from tree.M212.src.records import LAYOUTS, DatasetConfig
from tree.M221.src.main import GraspConfig

logger = get_logger("cli")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so run() owns the exit code."""

    def error(self, message):
        raise CliValidationError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# -- parser -------------------------------------------------------------------------------

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="Output directory; files inside are written once")
    common.add_argument("--seed", type=int, default=None, help="Seed for every random draw")
    common.add_argument("--threads", type=int, default=1, help="Worker threads (1 = reference mode)")
    common.add_argument("--config", default=None, help="YAML settings file")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def _camera_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--cameras", default=None, help="Camera text file")
    parser.add_argument("--view", type=int, default=0, help="Row of --cameras to use")
    parser.add_argument("--eye", type=float, nargs=3, default=None, metavar=("X", "Y", "Z"),
                        help="Camera position looking at the origin")
    parser.add_argument("--fov", type=float, default=12.0, help="Horizontal field of view in degrees (--eye)")
    parser.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("W", "H"))


def _scene_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--layout", required=True, help="Scene layout YAML")
    parser.add_argument("--table-latents", action="store_true",
                        help="Use the checkpoint's latent table rows for the layout's object ids")


def build_parser() -> CliArgumentParser:
    parser = CliArgumentParser(prog="neural-scene", description="Object-centric neural scene tools")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common_flags()

    p = commands.add_parser("gen-data", parents=[common], help="Generate an analytic dataset")
    p.add_argument("--num-objects", type=int)
    p.add_argument("--num-test-objects", type=int)
    p.add_argument("--num-views", type=int)
    p.add_argument("--num-grasps", type=int)
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--layout", choices=LAYOUTS)
    p.add_argument("--gripper-width", type=float)

    p = commands.add_parser("pretrain", parents=[common], help="Pre-train decoders and latents")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--rays-per-batch", type=int)
    p.add_argument("--num-samples", type=int)
    p.add_argument("--no-progress", action="store_true")

    p = commands.add_parser("invert", parents=[common], help="Fit latents to one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mode", default="latent_only", choices=[m.value for m in FinetuneMode] + ["latent", "decoder"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--num-samples", type=int)
    p.add_argument("--no-progress", action="store_true")
    _camera_flags(p)

    for name, text in (("render", "RGB render"), ("render-depth", "Depth raster"),
                       ("render-graspfield", "Grasp-score render")):
        p = commands.add_parser(name, parents=[common], help=text)
        _scene_flags(p)
        _camera_flags(p)
        p.add_argument("--num-samples", type=int)

    p = commands.add_parser("grasp", parents=[common], help="Propose and filter grasps")
    _scene_flags(p)
    p.add_argument("--object", type=int, action="append", dest="objects", help="Object id (repeatable)")
    p.add_argument("--res", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--t-open", type=float)
    p.add_argument("--t-closed", type=float)
    p.add_argument("--gripper-width", type=float)
    p.add_argument("--ground", action="store_true", default=None, help="Add the ground half-space obstacle")

    p = commands.add_parser("voxelize", parents=[common], help="Occupancy grid export")
    _scene_flags(p)
    p.add_argument("--object", type=int, default=None, help="Object id; whole scene when omitted")
    p.add_argument("--res", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--dense", action="store_true", help="Binary bitmap instead of the sparse text list")

    p = commands.add_parser("eval", parents=[common], help="PSNR and SSIM of two PNG images")
    p.add_argument("image_a")
    p.add_argument("image_b")

    p = commands.add_parser("bench", parents=[common], help="Render throughput")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--num-samples", type=int, default=32)
    p.add_argument("--repeats", type=int, default=3)
    return parser


# -- validation helpers -------------------------------------------------------------------

def _existing(path: Optional[str], what: str, directory: bool = False) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not (p.is_dir() if directory else p.is_file()):
        raise CliValidationError(f"{what} not found: {path}")
    return p


def _section(settings: Dict[str, Any], name: str) -> Dict[str, Any]:
    section = settings.get(name) or {}
    if not isinstance(section, dict):
        raise CliValidationError(f"settings section '{name}' must be a mapping")
    return section


def _effective(defaults: Dict[str, Any], settings: Dict[str, Any], name: str,
               flags: Dict[str, Any]) -> Dict[str, Any]:
    return merge_overrides(merge_overrides(defaults, _section(settings, name)), flags)


def _camera(args, root) -> Camera:
    if (args.cameras is None) == (args.eye is None):
        raise CliValidationError("give exactly one of --cameras or --eye")
    if args.cameras is not None:
        return root.camera_from_file(_existing(args.cameras, "camera file"), args.view)
    width, height = args.size
    return Camera.look_at(args.eye, width, height, args.fov)


# -- commands -----------------------------------------------------------------------------
# Each prepare function validates flags and returns (workflow, params, effective config,
# input files). Nothing is written before all of them succeed.

Prepared = Tuple[str, Dict[str, Any], Dict[str, Any], List[Path]]


def _prepare_gen_data(args, settings, root) -> Prepared:
    flags = {"num_objects": args.num_objects, "num_test_objects": args.num_test_objects,
             "num_views": args.num_views, "num_grasps": args.num_grasps, "layout": args.layout,
             "gripper_width": args.gripper_width, "seed": args.seed}
    if args.size is not None:
        flags.update(width=args.size[0], height=args.size[1])
    dataset = DatasetConfig.from_dict(_effective(DatasetConfig.defaults().to_dict(), settings, "dataset", flags))
    return "gen_data", {"config": dataset.to_dict()}, {"dataset": dataset.to_dict()}, []


def _train_config(args, settings, flags: Dict[str, Any]) -> TrainConfig:
    flags = {**flags, "seed": args.seed, "progress": False if args.no_progress else None}
    return TrainConfig.from_dict(_effective(TrainConfig.defaults().to_dict(), settings, "train", flags))


def _prepare_pretrain(args, settings, root) -> Prepared:
    dataset = _existing(args.dataset, "dataset directory", directory=True)
    train = _train_config(args, settings, {"epochs": args.epochs, "steps_per_epoch": args.steps_per_epoch,
                                           "lr": args.lr, "lam": args.lam, "rays_per_batch": args.rays_per_batch,
                                           "num_samples": args.num_samples})
    decoder = DecoderConfig.from_dict(_effective(DecoderConfig.defaults().to_dict(), settings, "decoder",
                                                 {"seed": args.seed}))
    params = {"dataset": dataset, "config": train.to_dict(), "decoder": decoder.to_dict()}
    return "pretrain", params, {"train": train.to_dict(), "decoder": decoder.to_dict()}, [dataset]


def _prepare_invert(args, settings, root) -> Prepared:
    inputs = [_existing(args.checkpoint, "checkpoint"), _existing(args.layout, "layout"),
              _existing(args.image, "image")]
    train = _train_config(args, settings, {"finetune_epochs": args.epochs, "finetune_lr": args.lr,
                                           "num_samples": args.num_samples})
    mode = FinetuneMode.parse(args.mode)
    camera = _camera(args, root)
    params = {"checkpoint": inputs[0], "layout": inputs[1], "image": inputs[2], "camera": camera,
              "mode": mode.value, "config": train.to_dict(), "num_samples": train.num_samples}
    effective = {"train": train.to_dict(), "mode": mode.value}
    return "invert", params, effective, inputs + ([Path(args.cameras)] if args.cameras else [])


def _render_preparer(workflow: str) -> Callable:
    def prepare(args, settings, root) -> Prepared:
        inputs = [_existing(args.checkpoint, "checkpoint"), _existing(args.layout, "layout")]
        render = _effective(node_defaults("M110"), settings, "render", {"num_samples": args.num_samples})
        camera = _camera(args, root)
        params = {"checkpoint": inputs[0], "layout": inputs[1], "camera": camera,
                  "num_samples": render["num_samples"], "use_table": args.table_latents}
        return workflow, params, {"render": render}, inputs + ([Path(args.cameras)] if args.cameras else [])
    return prepare


def _prepare_grasp(args, settings, root) -> Prepared:
    inputs = [_existing(args.checkpoint, "checkpoint"), _existing(args.layout, "layout")]
    flags = {"res": args.res, "top_k": args.top_k, "t_open": args.t_open, "t_closed": args.t_closed,
             "gripper_width": args.gripper_width, "ground": args.ground}
    grasp = GraspConfig.from_dict(_effective(GraspConfig.defaults().to_dict(), settings, "grasp", flags))
    if grasp.res < 2 or grasp.top_k < 1 or grasp.t_open <= 0.0 or grasp.t_closed <= 0.0:
        raise CliValidationError("need res >= 2, top-k >= 1, t-open > 0 and t-closed > 0")
    params = {"checkpoint": inputs[0], "layout": inputs[1], "object_ids": args.objects, "config": grasp.to_dict(),
              "use_table": args.table_latents}
    return "grasp", params, {"grasp": grasp.to_dict()}, inputs


def _prepare_voxelize(args, settings, root) -> Prepared:
    inputs = [_existing(args.checkpoint, "checkpoint"), _existing(args.layout, "layout")]
    voxel = _effective(node_defaults("M222"), settings, "voxel", {"res": args.res, "threshold": args.threshold})
    if int(voxel["res"]) < 2 or float(voxel["threshold"]) <= 0.0:
        raise CliValidationError("need res >= 2 and threshold > 0")
    params = {"checkpoint": inputs[0], "layout": inputs[1], "object_id": args.object, "res": int(voxel["res"]),
              "threshold": float(voxel["threshold"]), "dense": args.dense, "use_table": args.table_latents}
    return "voxelize", params, {"voxel": voxel, "dense": args.dense}, inputs


def _prepare_eval(args, settings, root) -> Prepared:
    inputs = [_existing(args.image_a, "image"), _existing(args.image_b, "image")]
    return "evaluate", {"image_a": inputs[0], "image_b": inputs[1]}, {}, inputs


def _decoder_seed(args, settings) -> int:
    decoder = _effective(DecoderConfig.defaults().to_dict(), settings, "decoder", {"seed": args.seed})
    return int(decoder["seed"])


def _prepare_bench(args, settings, root) -> Prepared:
    if args.size < 1 or args.num_samples < 1 or args.repeats < 1:
        raise CliValidationError("size, num-samples and repeats must be >= 1")
    checkpoint = _existing(args.checkpoint, "checkpoint")
    params = {"checkpoint": checkpoint, "size": args.size, "num_samples": args.num_samples,
              "repeats": args.repeats, "seed": _decoder_seed(args, settings)}
    effective = {"bench": {k: v for k, v in params.items() if k != "checkpoint"}}
    return "bench", params, effective, [checkpoint] if checkpoint else []


COMMANDS: Dict[str, Callable[..., Prepared]] = {
    "gen-data": _prepare_gen_data,
    "pretrain": _prepare_pretrain,
    "invert": _prepare_invert,
    "render": _render_preparer("render"),
    "render-depth": _render_preparer("render_depth"),
    "render-graspfield": _render_preparer("render_graspfield"),
    "grasp": _prepare_grasp,
    "voxelize": _prepare_voxelize,
    "eval": _prepare_eval,
    "bench": _prepare_bench,
}


# -- manifest -----------------------------------------------------------------------------

def sha256_of(path: Path) -> str:
    """Digest of a file, or of every file below a directory with its relative path."""
    digest = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for file in files:
        if path.is_dir():
            digest.update(file.relative_to(path).as_posix().encode("utf-8"))
        with open(file, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 16), b""):
                digest.update(block)
    return digest.hexdigest()


def git_describe() -> str:
    try:
        proc = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=PROJECT_ROOT,
                              capture_output=True, text=True, check=False)
    except OSError:
        return "unknown"
    return proc.stdout.strip() or "unknown"


def _plain(value: Any) -> Any:
    """YAML-safe copy of workflow results."""
    if isinstance(value, dict):
        return {(k if isinstance(k, (int, str)) else str(k)): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "item"):
        return value.item()
    return value


def build_manifest(command: str, argv: Sequence[str], args, effective: Dict[str, Any], inputs: List[Path],
                   results: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "command": command,
        "argv": list(argv),
        "seed": args.seed,
        "threads": args.threads,
        "git": git_describe(),
        "config": _plain(effective),
        "inputs": {str(p): sha256_of(p) for p in inputs},
        "outputs": _plain(results.pop("outputs", [])),
        "results": _plain(results),
    }


# -- entry points ---------------------------------------------------------------------------

def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, validate, run one workflow and write the manifest; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.log_level)
        if args.threads < 1:
            raise CliValidationError("--threads must be >= 1")
        settings = load_settings(_existing(args.config, "settings file")) if args.config else {}
        root = create_node(args.threads)
        workflow, params, effective, inputs = COMMANDS[args.command](args, settings, root)
        out = Path(args.out)
        if (out / "manifest.yaml").exists():
            raise CliValidationError(f"{out} already holds a finished run")
        out.mkdir(parents=True, exist_ok=True)
        results = root.run_workflow(workflow, out=out, **params)
        root.write_manifest(out, build_manifest(args.command, argv, args, effective, inputs, dict(results)))
        logger.info("%s: outputs in %s", args.command, out)
        return EXIT_OK
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except SceneValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
