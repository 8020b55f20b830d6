"""Worker pool for path-range parallelism.

Work is cut into chunks whose boundaries depend only on the problem size,
never on the thread count, and results are gathered in chunk order. Combined
with the counter-addressed generator this makes every output bitwise
independent of ``threads``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

_threads: int | None = None


def set_threads(n: int | None) -> None:
    """Set the pool size used by :func:`map_chunks`; ``None`` restores the default."""
    global _threads
    if n is not None and n < 1:
        raise ValueError("threads must be >= 1")
    _threads = n


def get_threads() -> int:
    return _threads or os.cpu_count() or 1


def chunk_bounds(n_items: int, chunk_size: int) -> list[tuple[int, int]]:
    chunk_size = max(1, int(chunk_size))
    return [(s, min(s + chunk_size, n_items)) for s in range(0, n_items, chunk_size)]


def map_chunks(fn: Callable[[int, int], T], n_items: int, chunk_size: int,
               threads: int | None = None) -> list[T]:
    """Apply ``fn(start, stop)`` to fixed-size ranges of ``[0, n_items)``, in order."""
    bounds = chunk_bounds(n_items, chunk_size)
    workers = min(threads or get_threads(), len(bounds))
    if workers <= 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
