"""
M122 - Checkpoint Store
Leaf Node: versioned binary checkpoint files

Layout (all little-endian):
    magic      4 bytes  b"NSCK"
    version    u16
    header     u32 latent_dim, hidden, num_layers, pos_freqs, dir_freqs; u8 include_input
    extra      u32 length + UTF-8 JSON (decoder seed, training metadata)
    count      u32 number of arrays
    per array  u16 name length, name bytes, u8 ndim, u32 dims..., float32 data (C order)
Arrays are written in the store's declared order: decoder layers, then the latent table.
"""
import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent))

from shared.types import CheckpointFormatError, LeafNode, NodeConfig, NodeLevel, NodeResult, NodeType
from shared.interfaces import FileInterface, InterfaceResult, ensure_parent, file_size
from shared.utils import get_logger
from shared.utils.autodiff import ParameterStore
from tree.M121.src.main import Checkpoint, DecoderConfig

MAGIC = b"NSCK"
VERSION = 1
HEADER = struct.Struct("<4sH5IB")
FLOAT = np.dtype("<f4")

logger = get_logger("M122")


def _read_exact(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise CheckpointFormatError("checkpoint is truncated")
    return data


def write_checkpoint(fh: BinaryIO, checkpoint: Checkpoint) -> None:
    cfg = checkpoint.config
    fh.write(HEADER.pack(MAGIC, VERSION, cfg.latent_dim, cfg.hidden, cfg.num_layers,
                         cfg.pos_freqs, cfg.dir_freqs, int(cfg.include_input)))
    extra = dict(checkpoint.extra)
    extra["decoder_seed"] = cfg.seed
    blob = json.dumps(extra, sort_keys=True).encode("utf-8")
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", len(checkpoint.params)))
    for name, array in checkpoint.params.items():
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype=FLOAT).tobytes())


def read_checkpoint(fh: BinaryIO) -> Checkpoint:
    magic, version, latent_dim, hidden, num_layers, pos_freqs, dir_freqs, include = \
        HEADER.unpack(_read_exact(fh, HEADER.size))
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
    try:
        extra = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt header blob: {exc}") from exc
    seed = int(extra.pop("decoder_seed", 0))
    config = DecoderConfig(latent_dim=latent_dim, hidden=hidden, num_layers=num_layers,
                           pos_freqs=pos_freqs, dir_freqs=dir_freqs, include_input=bool(include), seed=seed)

    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(_read_exact(fh, size * FLOAT.itemsize), dtype=FLOAT)
        arrays[name] = data.reshape(shape).astype(np.float64)
    if fh.read(1):
        raise CheckpointFormatError("trailing bytes after the last array")
    return Checkpoint(config, ParameterStore(arrays), extra)


def quantize(checkpoint: Checkpoint) -> Checkpoint:
    """The checkpoint as it reads back from disk (float32 round trip)."""
    arrays = {name: arr.astype(FLOAT).astype(np.float64) for name, arr in checkpoint.params.items()}
    return Checkpoint(checkpoint.config, ParameterStore(arrays), dict(checkpoint.extra))


class CheckpointFileInterface(FileInterface):
    """Binary checkpoint files."""

    def read(self, path) -> InterfaceResult:
        with open(path, "rb") as fh:
            checkpoint = read_checkpoint(fh)
        return InterfaceResult(success=True, data=checkpoint, bytes_transferred=file_size(path))

    def write(self, path, data: Any) -> InterfaceResult:
        with open(ensure_parent(path), "wb") as fh:
            write_checkpoint(fh, data)
        return InterfaceResult(success=True, data={"path": str(path)}, bytes_transferred=file_size(path))


class CheckpointStoreNode(LeafNode):
    """
    M122 - Checkpoint Store Leaf Node

    Responsibility: persist decoder weights, latent tables and headers
    External Interface: binary checkpoint files (.ckpt)
    """

    def __init__(self):
        config = NodeConfig(
            node_id="M122",
            name="Checkpoint Store",
            level=NodeLevel.LEAF,
            node_type=NodeType.INTERFACE,
            parent_id="M120",
            metadata={"interface": "checkpoint_file", "file_types": [".ckpt"]},
        )
        super().__init__(config)
        self._interface_type = "checkpoint_file"
        self._interface = CheckpointFileInterface()

    def process(self, input_data: Any) -> NodeResult:
        """
        Input format:
        {
            "action": "save" | "load",
            "path": "out/model.ckpt",
            "checkpoint": Checkpoint   # save only
        }
        """
        action = input_data.get("action", "load")
        path = input_data.get("path")
        try:
            if action == "save":
                result = self._interface.write(path, input_data["checkpoint"])
                logger.info("saved checkpoint %s (%d bytes)", path, result.bytes_transferred)
            elif action == "load":
                result = self._interface.read(path)
                logger.info("loaded checkpoint %s", path)
            else:
                return self.unknown_action(action)
            return NodeResult(success=result.success, data=result.data, error=result.error, node_id=self.node_id)
        except Exception as exc:
            logger.error("checkpoint %s failed for %s: %s", action, path, exc)
            return NodeResult.failure(exc, self.node_id)

    def save(self, checkpoint: Checkpoint, path) -> bool:
        """Convenience method to write a checkpoint."""
        return self.process({"action": "save", "path": path, "checkpoint": checkpoint}).success

    def load(self, path) -> Checkpoint:
        """Convenience method to read a checkpoint; raises on failure."""
        result = self.process({"action": "load", "path": path})
        if not result.success:
            raise CheckpointFormatError(result.error)
        return result.data


# Factory function
def create_node() -> CheckpointStoreNode:
    """Create and return M122 node instance."""
    return CheckpointStoreNode()
