"""Shared utilities for the node tree."""
from .sample_balancer import AllocationRecord, allocate_samples, split_work, summarize
from .parallel import map_chunks
from .logging_setup import configure_logging, get_logger

__all__ = [
    "AllocationRecord",
    "allocate_samples",
    "split_work",
    "summarize",
    "map_chunks",
    "configure_logging",
    "get_logger",
]
