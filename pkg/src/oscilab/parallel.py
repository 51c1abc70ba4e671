"""Ordered thread fan-out with single-threaded BLAS inside workers.

Work items are independent and results are collected in submission order,
so outputs do not depend on the number of threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, TypeVar

from threadpoolctl import threadpool_limits

T = TypeVar("T")
R = TypeVar("R")

_default_threads = int(os.environ.get("OSCILAB_THREADS", "1") or 1)


def set_default_threads(k: int) -> None:
    global _default_threads
    _default_threads = max(1, int(k))


def default_threads() -> int:
    return _default_threads


@contextmanager
def single_threaded_blas() -> Iterator[None]:
    with threadpool_limits(limits=1, user_api="blas"):
        yield


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    items = list(items)
    k = default_threads() if threads is None else max(1, int(threads))
    with single_threaded_blas():
        if k == 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=k) as pool:
            return list(pool.map(fn, items))
