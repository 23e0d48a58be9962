"""Counter-based random streams keyed by (master seed, path index, purpose)."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

PURPOSES = {"path": 1, "bridge": 2, "tail": 3, "kill": 4, "jumps": 5}

_MASK64 = (1 << 64) - 1

T = TypeVar("T")


@dataclass(frozen=True)
class RngPolicy:
    """Each (path index, purpose) pair owns a Philox stream.

    The Philox key is ``(master_seed, path_index)`` and the purpose tag sits in
    the top counter word, so two streams never share a counter block no matter
    how many draws either makes.
    """

    master_seed: int

    def __post_init__(self):
        if not isinstance(self.master_seed, (int, np.integer)):
            raise TypeError(f"master_seed must be an integer, got {type(self.master_seed).__name__}")

    def generator(self, path_index: int, purpose: str = "path") -> np.random.Generator:
        try:
            tag = PURPOSES[purpose]
        except KeyError:
            raise ValueError(f"unknown purpose {purpose!r}; expected one of {sorted(PURPOSES)}") from None
        if path_index < 0:
            raise ValueError(f"path_index must be nonnegative, got {path_index}")
        key = [int(self.master_seed) & _MASK64, int(path_index) & _MASK64]
        bitgen = np.random.Philox(key=key, counter=[0, 0, 0, tag])
        return np.random.Generator(bitgen)

    def stream_of_path(self, path_index: int) -> np.random.Generator:
        return self.generator(path_index, "path")


def thread_count() -> int:
    raw = os.environ.get("MAXPLUS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"MAXPLUS_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def chunk_ranges(start: int, count: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(s + chunk, start + count)) for s in range(start, start + count, chunk)]


def map_chunks(fn: Callable[[int, int], T], ranges: Sequence[tuple[int, int]]) -> list[T]:
    """Apply ``fn`` to each range, in a thread pool if allowed, keeping input order."""
    workers = min(thread_count(), len(ranges))
    if workers <= 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), ranges))
