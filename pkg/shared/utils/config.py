"""Node configuration loading and dataclass (de)serialization helpers."""
import json
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Type, TypeVar

import yaml

from shared.types.errors import SceneValidationError

T = TypeVar("T")

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent


def node_config_path(node_id: str) -> Path:
    return PROJECT_ROOT / "tree" / node_id / "config" / "config.json"


def load_node_config(node_id: str) -> Dict[str, Any]:
    """Read tree/<node_id>/config/config.json."""
    path = node_config_path(node_id)
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def node_defaults(node_id: str) -> Dict[str, Any]:
    return dict(load_node_config(node_id).get("defaults", {}))


def dataclass_from_dict(cls: Type[T], data: Dict[str, Any]) -> T:
    """Build a dataclass from a mapping, rejecting unknown keys."""
    if not is_dataclass(cls):
        raise TypeError(f"{cls!r} is not a dataclass")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise SceneValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def dataclass_to_dict(obj: Any) -> Dict[str, Any]:
    out = asdict(obj)
    for key, value in out.items():
        if hasattr(value, "value") and not isinstance(value, (int, float, str)):
            out[key] = value.value  # enums
    return out


def load_settings(path: Path) -> Dict[str, Any]:
    """Read a YAML settings file (one section per concern)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise SceneValidationError(f"settings file {path} must contain a mapping")
    return data


def merge_overrides(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Shallow merge ignoring None-valued overrides (unset flags)."""
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged
