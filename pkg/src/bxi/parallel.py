"""Ordered process-pool map."""

from __future__ import annotations

import os
from dataclasses import dataclass
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

WORKERS_ENV = "BXI_WORKERS"


def resolve_workers(requested: int | None = None) -> int:
    """Worker count: ``BXI_WORKERS`` if set, else ``requested``, else 1."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
    else:
        n = int(requested or 1)
    if n < 1:
        raise ValueError("worker count must be positive")
    return n


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, possibly computed in worker processes.

    Results are returned in input order, so downstream sums see the same
    sequence whatever the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


@dataclass(frozen=True)
class Failed:
    """Marker for a trial that raised one of the caught exceptions."""

    index: int
    message: str


class _Guard:
    def __init__(self, fn, catch):
        self.fn = fn
        self.catch = catch

    def __call__(self, item):
        i, x = item
        try:
            return self.fn(x)
        except self.catch as exc:
            return Failed(i, f"{type(exc).__name__}: {exc}")


def guarded_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1,
                catch: tuple[type[BaseException], ...] = ()) -> list[R | Failed]:
    """Like :func:`parallel_map` but trials raising ``catch`` become :class:`Failed` entries."""
    return parallel_map(_Guard(fn, catch), list(enumerate(items)), workers)


def succeeded(results: list) -> list:
    return [x for x in results if not isinstance(x, Failed)]


def failures(results: list) -> int:
    return sum(isinstance(x, Failed) for x in results)
