"""
Sample Balancer - fixed-budget distribution of ray samples across objects

Every ray owns a budget of J+1 samples. The budget is split evenly between
the objects the ray intersects; the remainder goes to the objects with the
longest covered interval, then to the lowest object id. Ties never depend on
the order objects appear in the scene list.

Complexity Analysis (O Notation):
- Allocation for N rays and M objects: O(N·M·log M) - one ranking sort per ray
- Work split over W workers: O(W)
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from shared.types.errors import MarchingError


@dataclass
class AllocationRecord:
    """Per-ray allocation summary used for debug dumps."""
    ray: int
    counts: Tuple[int, ...]

    @property
    def spread(self) -> int:
        """Difference between the largest and smallest count among hit objects."""
        nonzero = [c for c in self.counts if c > 0]
        return (max(nonzero) - min(nonzero)) if nonzero else 0


def allocate_samples(budget: int, hit: np.ndarray, lengths: np.ndarray, object_ids: np.ndarray) -> np.ndarray:
    """Integer sample counts per (ray, object) summing to `budget` on every ray.

    Args:
        budget: samples per ray (J+1)
        hit: (N, M) boolean hit matrix
        lengths: (N, M) covered interval lengths (ignored where not hit)
        object_ids: (M,) object ids used for tie-breaking

    Returns:
        (N, M) int64 counts; zero where not hit.
    """
    hit = np.asarray(hit, dtype=bool)
    num_rays, num_objects = hit.shape
    counts = np.zeros((num_rays, num_objects), dtype=np.int64)
    if num_rays == 0 or num_objects == 0:
        return counts

    num_hit = hit.sum(axis=1)
    if np.any(num_hit == 0):
        raise MarchingError("every ray must hit at least one object")
    if np.any(num_hit > budget):
        raise MarchingError(f"a ray hits {int(num_hit.max())} objects but only {budget} samples are available")

    base = budget // num_hit
    remainder = budget - base * num_hit

    # rank hit objects: longest interval first, then lowest id; misses sort last
    id_rank = np.argsort(np.argsort(np.asarray(object_ids), kind="stable"), kind="stable")
    length_key = np.where(hit, -np.asarray(lengths, dtype=np.float64), np.inf)
    id_key = np.broadcast_to(id_rank, hit.shape).copy()
    order = np.lexsort((id_key, length_key), axis=-1)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(num_objects)[None, :].repeat(num_rays, axis=0), axis=-1)

    counts = np.where(hit, base[:, None] + (rank < remainder[:, None]), 0)
    return counts.astype(np.int64)


def summarize(counts: np.ndarray) -> List[AllocationRecord]:
    return [AllocationRecord(ray=i, counts=tuple(int(c) for c in row)) for i, row in enumerate(counts)]


def split_work(num_items: int, chunk_size: int) -> List[Tuple[int, int]]:
    """Fixed-size [start, stop) chunks; independent of the worker count."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    return [(start, min(start + chunk_size, num_items)) for start in range(0, num_items, chunk_size)]
