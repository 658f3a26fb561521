"""Deterministic fan-out of pure tasks over a process pool.

Results are returned in task order and every task carries its own derived
seed, so the output is byte-identical for any worker count (including the
inline workers=1 path). Worker processes pin their BLAS pools to one thread;
callers running inline should do the same (see `limit_blas_threads`).
"""

from __future__ import annotations

import multiprocessing as mp
from typing import Any, Callable, List, Optional, Sequence

_WORKER_FN: Optional[Callable] = None
_WORKER_PAYLOAD: Any = None


def limit_blas_threads() -> None:
    """Pin numpy's BLAS to one thread; keeps accumulation order fixed
    everywhere so results do not depend on where a task runs."""
    import threadpoolctl

    threadpoolctl.threadpool_limits(1)


def _init_worker(fn: Callable, payload: Any) -> None:
    global _WORKER_FN, _WORKER_PAYLOAD
    limit_blas_threads()
    _WORKER_FN = fn
    _WORKER_PAYLOAD = payload


def _run_task(item: Any) -> Any:
    if _WORKER_PAYLOAD is None:
        return _WORKER_FN(item)
    return _WORKER_FN(_WORKER_PAYLOAD, item)


def parallel_map(
    fn: Callable,
    items: Sequence[Any],
    workers: int = 1,
    payload: Any = None,
    chunksize: Optional[int] = None,
) -> List[Any]:
    """Map `fn` over `items`, preserving order.

    With workers <= 1 the map runs inline. Otherwise a fork pool is used;
    `payload` (for example frozen network weights) is shipped once per worker
    and passed as the first argument of `fn`. `fn` must be a module-level
    function so that it pickles.
    """
    items = list(items)
    if not items:
        return []
    if workers <= 1:
        if payload is None:
            return [fn(item) for item in items]
        return [fn(payload, item) for item in items]

    if chunksize is None:
        chunksize = max(1, len(items) // (workers * 4))
    ctx = mp.get_context("fork")
    with ctx.Pool(processes=workers, initializer=_init_worker, initargs=(fn, payload)) as pool:
        return pool.map(_run_task, items, chunksize=chunksize)
