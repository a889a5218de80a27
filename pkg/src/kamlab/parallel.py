"""Process-wide thread count and an order-preserving parallel map.

Work is always split into the same fixed chunks whatever the thread
count, so results are bitwise independent of it.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor

_state = {"threads": 1}
_lock = threading.Lock()


def set_threads(n: int) -> None:
    if int(n) < 1:
        raise ValueError("thread count must be >= 1")
    with _lock:
        _state["threads"] = int(n)


def get_threads() -> int:
    return _state["threads"]


def ordered_map(fn, items):
    """[fn(x) for x in items], evaluated on the configured pool."""
    items = list(items)
    n = get_threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
