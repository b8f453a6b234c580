"""Deterministic chunked parallel map over a thread pool."""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

from shared.utils.sample_balancer import split_work

T = TypeVar("T")

DEFAULT_CHUNK = 4096


def map_chunks(fn: Callable[[int, int], T], num_items: int, threads: int = 1,
               chunk_size: int = DEFAULT_CHUNK) -> List[T]:
    """Apply fn(start, stop) to fixed chunks and return results in chunk order.

    Chunk boundaries depend only on num_items and chunk_size, so results are
    identical for any thread count.
    """
    chunks = split_work(num_items, chunk_size)
    if threads <= 1 or len(chunks) <= 1:
        return [fn(start, stop) for start, stop in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda span: fn(*span), chunks))
