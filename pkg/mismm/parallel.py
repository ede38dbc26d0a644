"""Thread-capped, order-preserving parallel map

numpy, scipy and cvxopt release the GIL inside their heavy kernels, so a thread
pool is enough to parallelize Gram rows, grid points and benchmark cells.
"""

from __future__ import annotations

import functools
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_default_threads: Optional[int] = None
_local = threading.local()


def set_default_threads(threads: Optional[int]) -> None:
    """Cap every parallel section that is not given an explicit thread count

    Args:

    - `threads`: the cap, or `None` to use all available cores
    """
    global _default_threads
    if threads is not None and threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    _default_threads = threads


def default_threads() -> int:
    if getattr(_local, "inline", False):
        return 1
    if _default_threads is not None:
        return _default_threads
    return os.cpu_count() or 1


def thread_map(
    fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None
) -> List[R]:
    """Apply `fn` to every item, returning results in input order

    Exceptions raised by `fn` propagate to the caller. With a single thread (or a
    single item) the map runs inline, which keeps tracebacks simple.
    """
    items = list(items)
    n = min(threads or default_threads(), len(items))
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(sequential(fn), items))


def sequential(f):
    """
    A decorator that runs `f` with nested parallel sections inlined

    Applied to work scheduled by an outer `thread_map`, so inner sections on the
    same thread do not oversubscribe the cores.
    """

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        previous = getattr(_local, "inline", False)
        _local.inline = True
        try:
            return f(*args, **kwargs)
        finally:
            _local.inline = previous

    return wrapper
