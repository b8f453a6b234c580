"""
External Interface Definitions
Defines contracts for the file-based interfaces used by leaf nodes.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

PathLike = Union[str, Path]


@dataclass
class InterfaceResult:
    """Result from external interface operation."""
    success: bool
    data: Any = None
    error: Optional[str] = None
    bytes_transferred: int = 0


class FileInterface(ABC):
    """Abstract interface for file-based I/O."""

    @abstractmethod
    def read(self, path: PathLike) -> InterfaceResult:
        """Read from file."""

    @abstractmethod
    def write(self, path: PathLike, data: Any) -> InterfaceResult:
        """Write to file."""

    def exists(self, path: PathLike) -> bool:
        return Path(path).exists()


def ensure_parent(path: PathLike) -> Path:
    """Create the parent directory of path and return it as a Path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def file_size(path: PathLike) -> int:
    try:
        return Path(path).stat().st_size
    except OSError:
        return 0
