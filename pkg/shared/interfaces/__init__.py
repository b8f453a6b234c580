"""External interface definitions."""
from .external import (
    InterfaceResult,
    FileInterface,
    PathLike,
    ensure_parent,
    file_size,
)
from .fields import RadianceField, GraspField

__all__ = [
    "InterfaceResult",
    "FileInterface",
    "PathLike",
    "ensure_parent",
    "file_size",
    "RadianceField",
    "GraspField",
]
