"""Order-preserving map over worker processes."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

THREADS_ENV = "PSMLIK_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def map_ordered(fn, items, threads: int | None = None) -> list:
    """``list(map(fn, items))``, optionally spread over ``threads`` processes.

    Results come back in input order, so output never depends on the
    worker count.
    """
    items = list(items)
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))
