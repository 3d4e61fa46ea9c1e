"""Deterministic ordered parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

T = TypeVar('T')
R = TypeVar('R')

THREADS_ENV = 'DEMAND_FORGE_THREADS'


def resolve_threads(threads: Optional[int] = None) -> int:
    """Thread count: the environment variable wins, then the argument, then the machine's core count."""
    env = os.environ.get(THREADS_ENV)
    if env:
        threads = int(env)
    if threads is None:
        threads = os.cpu_count() or 1
    return max(1, int(threads))


def map_ordered(function: Callable[[T], R], items: Iterable[T], threads: Optional[int] = 1) -> List[R]:
    """Apply ``function`` to every item and return results in input order.

    Each item is processed independently, so results do not depend on the thread count.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(function, items))
