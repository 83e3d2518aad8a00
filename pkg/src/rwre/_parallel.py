"""Deterministic chunked execution of trial ranges over a thread pool.

Workers write into disjoint slices of preallocated arrays, so the result
never depends on the schedule or on the thread count.
"""

from concurrent.futures import ThreadPoolExecutor

_threads = 1


def set_threads(n):
    global _threads
    _threads = max(1, int(n))


def get_threads():
    return _threads


def run_chunks(fn, n, threads=None, chunk=None):
    """Call ``fn(lo, hi)`` over a partition of ``range(n)``."""
    threads = get_threads() if threads is None else max(1, int(threads))
    if n <= 0:
        return
    if chunk is None:
        chunk = max(1, -(-n // (4 * threads)))
    bounds = [(lo, min(n, lo + chunk)) for lo in range(0, n, chunk)]
    if threads == 1 or len(bounds) == 1:
        for lo, hi in bounds:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for f in [pool.submit(fn, lo, hi) for lo, hi in bounds]:
            f.result()
