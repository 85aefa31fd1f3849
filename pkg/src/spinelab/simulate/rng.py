"""Seed-stream plumbing for reproducible replicate batches.

Replicates are grouped into fixed-size blocks; each block owns one generator
derived from (master_seed, namespace, block_index) through SeedSequence, so
results are bit-identical for a given seed no matter how blocks are scheduled
across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "NS_SWITCHED", "NS_SPINE", "NS_MARKS", "NS_PARTICLES",
           "NS_DECOMP", "NS_NLFK", "NS_INIT", "iter_blocks"]

# namespace constants keep the streams of different engines disjoint
NS_SWITCHED = 1
NS_SPINE = 2
NS_MARKS = 3
NS_PARTICLES = 4
NS_DECOMP = 5
NS_NLFK = 6
NS_INIT = 7


@dataclass(frozen=True)
class RngStream:
    """Counter-derived stream: (master_seed, namespace, replicate/block index)."""

    master_seed: int
    namespace: int
    index: int

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence([int(self.master_seed), int(self.namespace),
                                      int(self.index)])
        return np.random.default_rng(seq)


def iter_blocks(n_total: int, block_size: int):
    """Yield (block_index, start, stop) covering range(n_total)."""
    b = 0
    start = 0
    while start < n_total:
        stop = min(start + block_size, n_total)
        yield b, start, stop
        b += 1
        start = stop
