"""Thread-pool helpers for the embarrassingly parallel axes.

Every work item is a pure function of immutable inputs, so results are
collected by index and do not depend on the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None) -> int:
    if threads is None:
        return max(1, os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def parallel_map(fn, items, threads=None) -> list:
    """Order-preserving map over `items`, optionally on a thread pool."""
    items = list(items)
    n_workers = min(resolve_threads(threads), max(1, len(items)))
    if n_workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))
