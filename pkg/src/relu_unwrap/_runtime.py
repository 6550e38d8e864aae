"""Seeded random streams and the thread cap shared by all modules."""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "RELU_UNWRAP_THREADS"


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, name, index)``.

    Philox keys come from a SeedSequence whose spawn key encodes the stream
    name, so adding a new consumer never shifts an existing one.
    """
    key = (zlib.crc32(name.encode()), int(index))
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, name: str, index: int = 0) -> int:
    key = (zlib.crc32(name.encode()), int(index))
    return int(np.random.SeedSequence(int(seed), spawn_key=key).generate_state(1)[0])


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def parallel_map(fn, items):
    """Ordered map; runs on a thread pool when the cap allows more than one worker."""
    items = list(items)
    workers = min(thread_cap(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
