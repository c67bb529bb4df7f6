"""Order-preserving parallel map used by the enumeration, tuning and reconfiguration steps."""

from __future__ import annotations

import os
from typing import Callable, Iterable, TypeVar

from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")

WORKERS_ENV = "LOADRECONF_WORKERS"


def resolve_workers(n_jobs: int | None = None) -> int:
    """Explicit value wins, then the environment variable, then 1."""
    if n_jobs is None:
        env = os.environ.get(WORKERS_ENV)
        n_jobs = int(env) if env else 1
    if n_jobs < 1:
        raise ValueError("worker count must be >= 1")
    return n_jobs


def parallel_map(func: Callable[[T], R], items: Iterable[T], n_jobs: int = 1) -> list[R]:
    """``[func(x) for x in items]``, fanned out over ``n_jobs`` processes.

    Results always come back in input order, so callers reduce deterministically
    whatever the worker count.
    """
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    return Parallel(n_jobs=min(n_jobs, len(items)), backend="loky")(
        delayed(func)(x) for x in items
    )
