"""
On-disk formats for images, depth rasters, scene layouts and datasets.

Dataset directory:
    dataset.yaml                 index: format version, generation config, scene list with splits
    <scene>/layout.yaml          object poses, volumes, latent file references, background
    <scene>/objects.yaml         analytic object parameters, keyed by object id
    <scene>/cameras.txt          one camera per line
    <scene>/grasps.txt           one grasp annotation per line (object frame)
    <scene>/images/view_###.png  8-bit RGB, stored values are the rendered [0, 1] values × 255
"""
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from PIL import Image

from shared.interfaces import FileInterface, InterfaceResult, PathLike, ensure_parent, file_size
from shared.types import (
    BoundingVolume, Camera, DatasetFormatError, GraspAnnotation, LatentCode, ObjectInstance, Pose, Scene,
)
from tree.M212.src.records import DatasetConfig, SceneDataset, SceneRecord, View
from tree.M212.src.shapes import AnalyticObject

DATASET_FORMAT = "neural-scene-dataset"
DATASET_VERSION = 1
DEPTH_MAGIC = b"NSDR"
DEPTH_HEADER = struct.Struct("<4sII")
DEPTH_FLOAT = np.dtype("<f4")

CAMERA_HEADER = "# fx fy cx cy width height r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz"
ANNOTATION_HEADER = "# object_id px py pz r00 r01 r02 r10 r11 r12 r20 r21 r22 score"


def _floats(values) -> List[float]:
    return [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]


# -- images --------------------------------------------------------------------------

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: PathLike, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(ensure_parent(path), format="PNG")


def read_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_depth(fh: BinaryIO, depth: np.ndarray, valid: np.ndarray) -> None:
    """Header (magic, u32 width, u32 height), float32 depth rows, then one mask byte per pixel."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if depth.ndim != 2 or valid.shape != depth.shape:
        raise DatasetFormatError("depth and validity mask must be matching H×W arrays")
    height, width = depth.shape
    fh.write(DEPTH_HEADER.pack(DEPTH_MAGIC, width, height))
    fh.write(depth.astype(DEPTH_FLOAT).tobytes())
    fh.write(valid.astype(np.uint8).tobytes())


def read_depth(fh: BinaryIO) -> Tuple[np.ndarray, np.ndarray]:
    header = fh.read(DEPTH_HEADER.size)
    if len(header) != DEPTH_HEADER.size:
        raise DatasetFormatError("depth raster truncated in header")
    magic, width, height = DEPTH_HEADER.unpack(header)
    if magic != DEPTH_MAGIC:
        raise DatasetFormatError(f"bad depth raster magic {magic!r}")
    count = width * height
    body = fh.read(count * DEPTH_FLOAT.itemsize + count)
    if len(body) != count * DEPTH_FLOAT.itemsize + count:
        raise DatasetFormatError("depth raster truncated in body")
    depth = np.frombuffer(body[:count * DEPTH_FLOAT.itemsize], dtype=DEPTH_FLOAT).astype(np.float64)
    valid = np.frombuffer(body[count * DEPTH_FLOAT.itemsize:], dtype=np.uint8).astype(bool)
    return depth.reshape(height, width), valid.reshape(height, width)


# -- latents and layouts -------------------------------------------------------------

def format_latent(latent: LatentCode) -> str:
    return f"# latent dim {latent.dim}\n" + " ".join(f"{v:.9g}" for v in latent.values) + "\n"


def parse_latent(text: str) -> LatentCode:
    values = [float(v) for line in text.splitlines() if not line.startswith("#") for v in line.split()]
    if not values:
        raise DatasetFormatError("latent file holds no values")
    return LatentCode(np.array(values))


def layout_to_dict(scene: Scene, latent_files: Optional[Dict[int, str]] = None) -> Dict[str, Any]:
    """Scene layout mapping; rotations are row-major 9-vectors, lengths in meters."""
    latent_files = latent_files or {}
    return {
        "background": _floats(scene.background_color),
        "objects": [
            {
                "id": int(obj.id),
                "rotation": _floats(obj.pose.rotation),
                "translation": _floats(obj.pose.translation),
                "half_extents": _floats(obj.volume.half_extents),
                "latent_file": latent_files.get(obj.id),
            }
            for obj in scene.objects
        ],
    }


def layout_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None, latent_dim: int = 1) -> Scene:
    """Scene from a layout mapping; objects without a latent file get a zero latent of latent_dim."""
    try:
        objects = []
        for entry in data.get("objects") or []:
            latent_file = entry.get("latent_file")
            if latent_file:
                path = Path(latent_file)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                latent = parse_latent(path.read_text(encoding="utf-8"))
            else:
                latent = LatentCode.zeros(latent_dim)
            pose = Pose(np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3), entry["translation"])
            objects.append(ObjectInstance(int(entry["id"]), pose, BoundingVolume(entry["half_extents"]), latent))
        return Scene(tuple(objects), np.asarray(data.get("background", (1.0, 1.0, 1.0)), dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"malformed layout: {exc}") from exc


def write_yaml(path: PathLike, data: Any) -> int:
    with open(ensure_parent(path), "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False, default_flow_style=None)
    return file_size(path)


def read_yaml(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


# -- cameras and annotations ---------------------------------------------------------

def format_cameras(cameras: Sequence[Camera]) -> str:
    lines = [CAMERA_HEADER]
    for cam in cameras:
        values = [cam.fx, cam.fy, cam.cx, cam.cy]
        line = " ".join(f"{v:.9g}" for v in values) + f" {cam.width} {cam.height} "
        line += " ".join(f"{v:.9g}" for v in [*cam.pose.rotation.reshape(-1), *cam.pose.translation])
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_cameras(text: str) -> List[Camera]:
    cameras = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 18:
            raise DatasetFormatError(f"camera line {lineno}: expected 18 fields, got {len(fields)}")
        fx, fy, cx, cy = (float(v) for v in fields[:4])
        width, height = int(fields[4]), int(fields[5])
        rest = np.array([float(v) for v in fields[6:]])
        cameras.append(Camera(Pose(rest[:9].reshape(3, 3), rest[9:]), fx, fy, cx, cy, width, height))
    return cameras


def format_annotations(grasps: Sequence[GraspAnnotation]) -> str:
    lines = [ANNOTATION_HEADER]
    for g in grasps:
        values = [*g.position, *g.rotation.reshape(-1), g.score]
        lines.append(f"{g.object_id} " + " ".join(f"{v:.9g}" for v in values))
    return "\n".join(lines) + "\n"


def parse_annotations(text: str) -> List[GraspAnnotation]:
    grasps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 14:
            raise DatasetFormatError(f"grasp annotation line {lineno}: expected 14 fields, got {len(fields)}")
        values = np.array([float(v) for v in fields[1:]])
        # 9-digit text can leave a rotation slightly off orthonormal; project back
        u, _, vt = np.linalg.svd(values[3:12].reshape(3, 3))
        rotation = u @ vt
        grasps.append(GraspAnnotation(int(fields[0]), values[:3], rotation, float(np.clip(values[12], 0.0, 1.0))))
    return grasps


# -- datasets ------------------------------------------------------------------------

def view_filename(index: int) -> str:
    return f"images/view_{index:03d}.png"


def write_record(root: Path, record: SceneRecord) -> None:
    scene_dir = root / record.name
    write_yaml(scene_dir / "layout.yaml", layout_to_dict(record.scene))
    write_yaml(scene_dir / "objects.yaml", [{"id": int(i), **obj.to_dict()}
                                            for i, obj in zip(record.object_ids, record.objects)])
    with open(ensure_parent(scene_dir / "cameras.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_cameras([v.camera for v in record.views]))
    with open(scene_dir / "grasps.txt", "w", encoding="utf-8") as fh:
        fh.write(format_annotations(record.grasps))
    for index, view in enumerate(record.views):
        write_png(scene_dir / view_filename(index), view.image)


def read_record(root: Path, name: str, split: str) -> SceneRecord:
    scene_dir = root / name
    if not scene_dir.is_dir():
        raise DatasetFormatError(f"missing scene directory {scene_dir}")
    scene = layout_from_dict(read_yaml(scene_dir / "layout.yaml"), scene_dir)
    entries = {int(e["id"]): e for e in read_yaml(scene_dir / "objects.yaml") or []}
    missing = [i for i in scene.ids if i not in entries]
    if missing:
        raise DatasetFormatError(f"{name}: objects.yaml lacks ids {missing}")
    objects = [AnalyticObject.from_dict(entries[i]) for i in scene.ids]
    cameras = parse_cameras((scene_dir / "cameras.txt").read_text(encoding="utf-8"))
    views = [View(cam, read_png(scene_dir / view_filename(i))) for i, cam in enumerate(cameras)]
    grasps = parse_annotations((scene_dir / "grasps.txt").read_text(encoding="utf-8"))
    return SceneRecord(name, split, scene, objects, views, grasps)


def write_dataset(root: PathLike, dataset: SceneDataset) -> None:
    root = Path(root)
    for record in dataset.records:
        write_record(root, record)
    write_yaml(root / "dataset.yaml", {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "config": dataset.config.to_dict(),
        "scenes": [{"name": r.name, "split": r.split} for r in dataset.records],
    })


def read_dataset(root: PathLike) -> SceneDataset:
    root = Path(root)
    index = read_yaml(root / "dataset.yaml")
    if not isinstance(index, dict) or index.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"{root} is not a dataset directory")
    if index.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {index.get('version')}")
    config = DatasetConfig.from_dict(index.get("config") or {})
    records = [read_record(root, entry["name"], entry["split"]) for entry in index.get("scenes") or []]
    return SceneDataset(records, config)


# -- file interfaces -----------------------------------------------------------------

class PngInterface(FileInterface):
    """8-bit RGB PNG images."""

    def read(self, path) -> InterfaceResult:
        return InterfaceResult(success=True, data=read_png(path), bytes_transferred=file_size(path))

    def write(self, path, data: Any) -> InterfaceResult:
        write_png(path, data)
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


class DepthRasterInterface(FileInterface):
    """Little-endian float depth raster plus validity mask; data is (depth, valid)."""

    def read(self, path) -> InterfaceResult:
        with open(path, "rb") as fh:
            data = read_depth(fh)
        return InterfaceResult(success=True, data=data, bytes_transferred=file_size(path))

    def write(self, path, data: Any) -> InterfaceResult:
        depth, valid = data
        with open(ensure_parent(path), "wb") as fh:
            write_depth(fh, depth, valid)
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


class LayoutInterface(FileInterface):
    """Scene layout YAML; data is a Scene, or (Scene, {object id: latent file}) on write."""

    def __init__(self, latent_dim: int = 1):
        self.latent_dim = latent_dim

    def read(self, path) -> InterfaceResult:
        scene = layout_from_dict(read_yaml(path) or {}, Path(path).parent, self.latent_dim)
        return InterfaceResult(success=True, data=scene, bytes_transferred=file_size(path))

    def write(self, path, data: Any) -> InterfaceResult:
        scene, latent_files = data if isinstance(data, tuple) else (data, None)
        size = write_yaml(path, layout_to_dict(scene, latent_files))
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=size)


class LatentInterface(FileInterface):
    """One latent code per text file."""

    def read(self, path) -> InterfaceResult:
        text = Path(path).read_text(encoding="utf-8")
        return InterfaceResult(success=True, data=parse_latent(text), bytes_transferred=len(text))

    def write(self, path, data: Any) -> InterfaceResult:
        ensure_parent(path).write_text(format_latent(data), encoding="utf-8")
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


class DatasetInterface(FileInterface):
    """Whole dataset directories."""

    def read(self, path) -> InterfaceResult:
        return InterfaceResult(success=True, data=read_dataset(path))

    def write(self, path, data: Any) -> InterfaceResult:
        write_dataset(path, data)
        return InterfaceResult(success=True, data={"path": str(path), "scenes": len(data)})

    def exists(self, path) -> bool:
        return (Path(path) / "dataset.yaml").exists()
