"""
Something kinda like a process pool, for Trio.

Wraps ``trio-parallel`` so per-utterance work can fan out over ``--jobs`` worker
processes. Results always come back in submission order, so outputs don't
depend on scheduling.
"""

import logging
from functools import partial
from typing import Callable, Sequence, TypeVar

import trio
import trio_parallel

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class WorkerPool:
    _ctx_manager: object | None
    _ctx: trio_parallel.WorkerContext | None
    _ctx_lock: trio.Lock
    _limiter: trio.CapacityLimiter

    def __init__(self, n_workers: int, idle_timeout: float = 600.0) -> None:
        if n_workers < 1:
            raise ValueError(f"Need at least one worker, not {n_workers}")
        self._ctx_manager = None
        self._ctx = None
        self._ctx_lock = trio.Lock()
        self._limiter = trio.CapacityLimiter(n_workers)
        self._idle_timeout = idle_timeout

    async def __aenter__(self):
        async with self._ctx_lock:
            await self._start()
        return self

    async def __aexit__(self, *exc_info):
        async with self._ctx_lock:
            await self._stop()

    async def _start(self) -> None:
        # assumes lock is held
        assert self._ctx is None, self._ctx
        self._ctx_manager = trio_parallel.open_worker_context(
            idle_timeout=self._idle_timeout
        )
        self._ctx = await self._ctx_manager.__aenter__()  # type: ignore

    async def _stop(self) -> None:
        # assumes lock is held
        if self._ctx is None:
            return
        manager, self._ctx, self._ctx_manager = self._ctx_manager, None, None
        await manager.__aexit__(None, None, None)  # type: ignore

    async def run_sync(self, func: Callable[..., R], *args, **kwargs) -> R:
        """
        Run ``func(*args, **kwargs)`` in a worker process and return/raise its outcome.

        Cancellation in the parent process will send SIGKILL to the worker process.
        """
        async with self._ctx_lock:
            # Only guards the `_ctx` variable itself; don't hold it while the task
            # runs, so a concurrent shutdown can cancel this task.
            if not (ctx := self._ctx):
                raise trio.ClosedResourceError("Worker pool is closed")

        return await ctx.run_sync(
            partial(func, *args, **kwargs), cancellable=True, limiter=self._limiter
        )

    async def map(self, func: Callable[[T], R], items: Sequence[T]) -> list[R]:
        "``[func(x) for x in items]`` across the workers, in order."
        results: list[R | None] = [None] * len(items)

        async def run_one(i: int, item: T) -> None:
            results[i] = await self.run_sync(func, item)

        async with trio.open_nursery() as nursery:
            for i, item in enumerate(items):
                nursery.start_soon(run_one, i, item)
        return results  # type: ignore

    @property
    def n_workers(self) -> int:
        return self._limiter.total_tokens  # type: ignore


def run_parallel(func: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """
    Map a module-level (picklable) function over ``items``.

    ``jobs == 1`` runs in this process; otherwise ``jobs`` worker processes are used.
    """
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    async def main() -> list[R]:
        async with WorkerPool(min(jobs, len(items))) as pool:
            log.debug("Running %d items on %d workers", len(items), pool.n_workers)
            return await pool.map(func, items)

    return trio.run(main)
