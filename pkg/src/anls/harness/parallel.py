"""Ensemble parallelism capped by the ANLS_THREADS environment variable."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def max_workers(default: int = 1) -> int:
    raw = os.environ.get("ANLS_THREADS", "")
    if not raw:
        return default
    try:
        cap = int(raw)
    except ValueError:
        return default
    return max(1, cap)


def thread_map(fn, items, default_workers: int = 1):
    """Ordered map over items; runs in a thread pool when the cap allows."""
    items = list(items)
    workers = min(max_workers(default_workers), max(1, len(items)))
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
