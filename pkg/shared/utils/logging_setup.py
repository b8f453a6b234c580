"""Logging configuration shared by every node."""
import logging
import sys
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
ROOT_LOGGER = "neural_scene"


def get_logger(node_id: str) -> logging.Logger:
    """Logger for a node, e.g. neural_scene.M111."""
    return logging.getLogger(f"{ROOT_LOGGER}.{node_id}")


def configure_logging(level: Union[int, str] = "INFO", log_file: Optional[Path] = None) -> logging.Logger:
    """Send pipeline logs to stderr (and optionally a file). Idempotent."""
    root = logging.getLogger(ROOT_LOGGER)
    root.setLevel(level if isinstance(level, int) else level.upper())
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    root.addHandler(stream)
    if log_file is not None:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
    root.propagate = False
    return root
