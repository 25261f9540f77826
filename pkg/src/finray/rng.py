"""Seeded random streams.

All randomness is derived from a single integer seed. Each module asks for a
named sub-stream, and parallel Monte Carlo code asks for one counter-based
(Philox) stream per fixed-size block, keyed by ``(seed, name, block)``.
Because block boundaries never depend on the number of worker threads,
results are identical for any degree of parallelism.
"""

import hashlib

import numpy as np


def stream_id(name: str) -> int:
    """Stable 32-bit identifier for a stream name (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Return a Philox generator for ``(seed, name, *index)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_id(name), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def block_ranges(n: int, block_size: int):
    """Split ``range(n)`` into consecutive ``(block_index, start, stop)`` triples."""
    for b, start in enumerate(range(0, n, block_size)):
        yield b, start, min(start + block_size, n)
