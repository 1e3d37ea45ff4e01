# backend/services/fanout.py
from __future__ import annotations

import asyncio
from typing import Callable, List, Optional, Sequence, TypeVar

from common.config_loader import WORKERS

T = TypeVar("T")
R = TypeVar("R")


async def _gather_in_threads(func: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    gate = asyncio.Semaphore(workers)

    async def _one(item: T) -> R:
        async with gate:
            return await asyncio.to_thread(func, item)

    return list(await asyncio.gather(*(_one(i) for i in items)))


def fan_out(func: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None) -> List[R]:
    """
    Run `func` over `items` on worker threads; results come back in input order,
    so whoever writes them out does so deterministically. Must not be called from
    inside a running event loop.
    """
    items = list(items)
    if not items:
        return []
    n = max(1, workers or WORKERS)
    if n == 1 or len(items) == 1:
        return [func(i) for i in items]
    return asyncio.run(_gather_in_threads(func, items, n))
