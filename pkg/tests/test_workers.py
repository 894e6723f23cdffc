import os

import pytest
import trio.testing

from framemos.workers import WorkerPool, run_parallel


def square(x: int) -> int:
    return x * x


def pid_of(_: object) -> int:
    return os.getpid()


@trio.testing.trio_test
async def test_worker_pool():
    pool = WorkerPool(2)

    with pytest.raises(trio.ClosedResourceError, match="Worker pool is closed"):
        await pool.run_sync(lambda: None)

    async with pool:
        assert await pool.run_sync(os.getpid) != os.getpid()

    with pytest.raises(trio.ClosedResourceError, match="Worker pool is closed"):
        await pool.run_sync(lambda: None)


@trio.testing.trio_test
async def test_worker_pool_map_keeps_order():
    async with WorkerPool(3) as pool:
        assert pool.n_workers == 3
        assert await pool.map(square, list(range(10))) == [x * x for x in range(10)]


def test_worker_pool_needs_a_worker():
    with pytest.raises(ValueError, match="at least one worker"):
        WorkerPool(0)


@pytest.mark.parametrize("jobs", [1, 2])
def test_run_parallel(jobs):
    assert run_parallel(square, [3, 1, 2], jobs=jobs) == [9, 1, 4]
    assert run_parallel(square, [], jobs=jobs) == []


def test_run_parallel_in_process_for_one_job():
    assert set(run_parallel(pid_of, [1, 2, 3], jobs=1)) == {os.getpid()}
    assert os.getpid() not in run_parallel(pid_of, [1, 2, 3], jobs=2)
