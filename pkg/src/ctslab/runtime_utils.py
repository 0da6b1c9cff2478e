"""Structured event logging and thread fan-out helpers shared across modules."""

from __future__ import annotations

import asyncio
import json
import logging
from collections.abc import Callable, Sequence
from typing import Any, TypeVar

from .config import get_max_workers, runtime_event_logs_enabled

_logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def log_runtime_event(logger: logging.Logger, event: str, **fields: Any) -> None:
    """Emit opt-in, structured runtime event logs."""
    if not runtime_event_logs_enabled():
        return

    encoded_fields = " ".join(
        f"{name}={json.dumps(value, ensure_ascii=True, sort_keys=True)}" for name, value in sorted(fields.items())
    )
    if encoded_fields:
        logger.info("event=%s %s", event, encoded_fields)
        return
    logger.info("event=%s", event)


async def gather_in_threads(
    func: Callable[[T], R],
    items: Sequence[T],
    *,
    max_workers: int | None = None,
) -> list[R]:
    """Run ``func`` over ``items`` in worker threads; results keep the input order."""
    limit = max(1, max_workers if max_workers is not None else get_max_workers())
    semaphore = asyncio.Semaphore(limit)

    async def _run_one(index: int, item: T) -> R:
        async with semaphore:
            log_runtime_event(_logger, "worker_start", index=index, max_workers=limit)
            result = await asyncio.to_thread(func, item)
            log_runtime_event(_logger, "worker_done", index=index)
            return result

    return list(await asyncio.gather(*(_run_one(index, item) for index, item in enumerate(items))))


def run_in_threads(
    func: Callable[[T], R],
    items: Sequence[T],
    *,
    max_workers: int | None = None,
) -> list[R]:
    """Synchronous entry point for :func:`gather_in_threads`."""
    if not items:
        return []
    return asyncio.run(gather_in_threads(func, items, max_workers=max_workers))
