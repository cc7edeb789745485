"""Chunked thread-pool helpers. Results are always reassembled in input order."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

ENV_THREADS = "DOCSEG_THREADS"


def resolve_workers(workers: Optional[int] = None) -> int:
    cap = os.environ.get(ENV_THREADS)
    cap = max(1, int(cap)) if cap and cap.strip().isdigit() else None
    if workers is None:
        workers = cap or 1
    elif cap is not None:
        workers = min(workers, cap)
    return max(1, int(workers))


def map_chunks(fn: Callable[[np.ndarray], np.ndarray], items: np.ndarray,
               workers: Optional[int] = None, min_chunk: int = 64) -> np.ndarray:
    """Apply ``fn`` to contiguous chunks of ``items`` and concatenate.

    ``fn`` must act row-wise so that chunking cannot change the result.
    """
    n = len(items)
    w = resolve_workers(workers)
    if w == 1 or n <= min_chunk:
        return fn(items)
    parts = np.array_split(np.arange(n), min(w, -(-n // min_chunk)))
    with ThreadPoolExecutor(max_workers=w) as pool:
        outs = list(pool.map(lambda idx: fn(items[idx[0]: idx[-1] + 1]), parts))
    if isinstance(outs[0], tuple):
        return tuple(np.concatenate(col) for col in zip(*outs))
    return np.concatenate(outs)
