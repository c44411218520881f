"""Splittable, counter-based random streams.

A stream is the value ``(master_seed, path)``. Generators are Philox
(counter-based) keyed through :class:`numpy.random.SeedSequence` with the path
as spawn key, so a child stream's draws depend only on its path and never on
the order in which sibling tasks ran.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = 2**64


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < _U64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if any(int(p) < 0 for p in self.path):
            raise ValueError("stream path entries must be non-negative")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, *index: int) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(index))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"expected RngStream or integer seed, got {type(rng).__name__}")
