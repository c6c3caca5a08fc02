"""Replication-level worker pool with ordered, deterministic reduction."""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, List, Optional, Sequence

from ..config import config

logger = logging.getLogger(__name__)


def blocks(count: int, size: int) -> List[range]:
    """Split range(count) into consecutive chunks of at most `size`."""
    size = max(1, int(size))
    return [range(start, min(start + size, count)) for start in range(0, count, size)]


def map_replications(
    func: Callable[..., Any],
    items: Sequence[Any],
    *args: Any,
    threads: Optional[int] = None,
) -> List[Any]:
    """[func(item, *args) for item in items], possibly across processes.

    Results come back in the order of `items` whatever the completion
    order; `func` must be a module-level callable and every argument
    picklable.
    """
    workers = threads if threads is not None else config.threads
    if workers <= 1 or len(items) <= 1:
        return [func(item, *args) for item in items]

    logger.debug("Running %s work items on %s processes", len(items), workers)
    results: List[Any] = [None] * len(items)
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as executor:
        futures = {
            executor.submit(func, item, *args): index for index, item in enumerate(items)
        }
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results
