"""Deterministic chunked map-reduce.

Trajectory indices are cut into fixed-size chunks whose boundaries do not
depend on the worker count, and partial results are merged by a pairwise
tree in chunk order.  Worker count therefore only changes wall time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

CHUNK_SIZE = 256


def chunk_bounds(n: int, size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def map_chunks(fn, bounds, workers: int = 1) -> list:
    if workers is None or workers <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def tree_reduce(items: list, combine):
    if not items:
        raise ValueError("nothing to reduce")
    items = list(items)
    while len(items) > 1:
        merged = [combine(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def map_reduce(fn, n: int, combine, workers: int = 1, size: int = CHUNK_SIZE):
    return tree_reduce(map_chunks(fn, chunk_bounds(n, size), workers), combine)


def add_tuples(a, b):
    return tuple(x + y for x, y in zip(a, b))
