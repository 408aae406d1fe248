"""Chunked map-reduce over trajectory indices.

Work is cut into fixed-size chunks that do not depend on the worker count.
Partial results come back in chunk order and are folded left to right, so a
floating-point reduction gives the same bits for 1 worker or 16.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

P = TypeVar("P")

CHUNK_SIZE = 2500


def chunk_ranges(n_traj: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if chunk_size < 1:
        raise ValueError("chunk_size must be at least 1")
    return [(a, min(n_traj, a + chunk_size)) for a in range(0, n_traj, chunk_size)]


def map_chunks(fn: Callable[[int, int], P], n_traj: int, workers: int = 1,
               chunk_size: int = CHUNK_SIZE) -> Iterable[P]:
    """Yield ``fn(start, stop)`` for every chunk, in chunk order.

    ``fn`` must be picklable when ``workers > 1`` (a module-level function or a
    ``functools.partial`` of one).
    """
    ranges = chunk_ranges(n_traj, chunk_size)
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if workers == 1 or len(ranges) == 1:
        for a, b in ranges:
            yield fn(a, b)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        starts = [a for a, _ in ranges]
        stops = [b for _, b in ranges]
        yield from pool.map(fn, starts, stops)


def reduce_chunks(fn: Callable[[int, int], P], combine: Callable[[P, P], P], n_traj: int,
                  workers: int = 1, chunk_size: int = CHUNK_SIZE) -> P:
    acc = None
    for part in map_chunks(fn, n_traj, workers, chunk_size):
        acc = part if acc is None else combine(acc, part)
    return acc
