"""Random streams and the worker pool

Every trajectory, replica and chain draws from its own stream, derived from
the master seed and the item's index. Work is farmed out in blocks but the
per-item streams make the results independent of block size and thread count.
"""

import os
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

log = logging.getLogger(__name__)

THREADS_ENV = 'DIFFLAB_THREADS'


def stream(seed, index):
    """Gets the generator for item `index` under master seed `seed`

    The splitting rule is numpy's SeedSequence hash of the pair
    (seed, index), a 64-bit mix that keeps sibling streams independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def streams(seed, start, stop):
    """Generators for the items in [start, stop)"""
    return [stream(seed, i) for i in range(start, stop)]


def _thread_cap():
    """The DIFFLAB_THREADS cap, None when it is unset or unreadable"""
    cap = os.environ.get(THREADS_ENV)
    if not cap:
        return None
    try:
        return max(1, int(cap))
    except ValueError:
        log.warning('ignoring non-integer %s=%r', THREADS_ENV, cap)
        return None


def thread_count(requested=None):
    """Worker count, capped by DIFFLAB_THREADS when it is set

    Without a request the count is the CPU count; an explicit request is
    honoured up to the cap."""
    cap = _thread_cap()
    if requested is None:
        cpus = os.cpu_count() or 1
        return cpus if cap is None else min(cap, cpus)
    threads = max(1, int(requested))
    return threads if cap is None else min(threads, cap)


def blocks(count, size):
    """Splits range(count) into consecutive (start, stop) pairs"""
    size = max(1, int(size))
    return [(lo, min(lo + size, count)) for lo in range(0, count, size)]


def parallel_map(fn, items, threads=None):
    """Applies fn to every item, results in input order

    numpy releases the GIL in the heavy kernels, so a thread pool is enough."""
    items = list(items)
    threads = thread_count(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    log.debug('dispatching %d work items over %d threads', len(items), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
