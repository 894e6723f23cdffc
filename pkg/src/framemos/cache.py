"""
On-disk memoization keyed by `framemos.hash.tokenize`.

Off until `configure` is called with a directory (the CLI's ``--cache-dir``), so
library use and tests never touch the disk unless asked to.
"""

import functools
import logging
import os
from pathlib import Path
from typing import Callable, ParamSpec, TypeVar

import diskcache

from framemos.hash import tokenize

log = logging.getLogger(__name__)

P = ParamSpec("P")
R = TypeVar("R")

_cache: diskcache.FanoutCache | None = None


def configure(directory: str | os.PathLike | None, size_limit: int = 2**30) -> None:
    "Point the cache at ``directory``, or turn it off with ``None``."
    global _cache
    if _cache is not None:
        _cache.close()
        _cache = None
    if directory is None:
        return

    _cache = diskcache.FanoutCache(
        str(directory),
        shards=os.cpu_count() or 1,
        eviction_policy="least-recently-used",
        size_limit=size_limit,
    )
    try:
        with open(Path(_cache.directory) / ".gitignore", "x") as f:
            # ensure a .gitignore exists for the cache directory
            f.write("*\n")
    except FileExistsError:
        pass
    log.debug("Caching to %s", _cache.directory)


def enabled() -> bool:
    return _cache is not None


def cache(func: Callable[P, R]) -> Callable[P, R]:
    "Memoize ``func`` on disk while a cache directory is configured."
    func_key = tokenize(func)

    @functools.wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        if (c := _cache) is None:
            return func(*args, **kwargs)

        key = tokenize(func_key, *args, **kwargs)
        try:
            return c[key]  # type: ignore
        except KeyError:
            pass

        with diskcache.Lock(c, f"{key}-lock", expire=24 * 60 * 60):
            # may have been added while waiting for lock
            try:
                return c[key]  # type: ignore
            except KeyError:
                pass

            result = func(*args, **kwargs)
            c.set(key, result)
            return result

    return wrapper
