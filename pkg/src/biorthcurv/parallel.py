"""Order-preserving process-pool map.

Results come back in input order and every reduction downstream runs over that
order, so the output of a scan does not depend on the worker count.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor


class WorkerPool:
    """Context manager wrapping a process pool; jobs <= 1 runs in-process."""

    def __init__(self, jobs=1):
        self.jobs = max(1, int(jobs or 1))
        self._ex = None

    def __enter__(self):
        if self.jobs > 1:
            ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
            self._ex = ProcessPoolExecutor(max_workers=self.jobs, mp_context=ctx)
        return self

    def __exit__(self, *exc):
        if self._ex is not None:
            self._ex.shutdown()
            self._ex = None

    def map(self, fn, items):
        items = list(items)
        if self._ex is None or len(items) <= 1:
            return [fn(it) for it in items]
        return list(self._ex.map(fn, items, chunksize=1))


def pmap(fn, items, jobs=1):
    with WorkerPool(jobs) as pool:
        return pool.map(fn, items)
