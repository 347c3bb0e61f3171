"""Order-preserving replicate execution."""

from __future__ import annotations

import os
import pickle
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(workers=None) -> int:
    """Explicit value, else ``DOTLAB_THREADS``, else the CPU count."""
    if workers is None:
        env = os.environ.get("DOTLAB_THREADS", "").strip()
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def _picklable(obj) -> bool:
    try:
        pickle.dumps(obj)
    except Exception:
        return False
    return True


def ordered_map(fn, items, workers=None) -> list:
    """``[fn(x) for x in items]``, possibly spread over worker processes.

    Results come back in input order, so reports do not depend on the worker
    count. Falls back to serial execution when ``fn`` cannot be pickled
    (e.g. a custom divergence built from lambdas).
    """
    items = list(items)
    n_workers = min(resolve_workers(workers), len(items))
    if n_workers <= 1 or not _picklable(fn):
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * n_workers))
    with ProcessPoolExecutor(max_workers=n_workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
