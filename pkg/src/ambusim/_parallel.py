"""Small process-pool helper; results are independent of the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, jobs=1):
    """Map fn over items, optionally across processes. jobs=None uses all cores.

    `fn` and its payload must be picklable when jobs > 1. Order is preserved,
    and because each work unit carries its own seed, the result does not depend
    on the schedule.
    """
    items = list(items)
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))
