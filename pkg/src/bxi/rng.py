"""Deterministic, splittable random streams.

Every sample in the package is drawn from a generator keyed by
``(value, stream_id, *sub)``.  Keys are hashed through
:class:`numpy.random.SeedSequence` into a counter-based Philox generator, so
the bits a trial consumes depend only on its key and never on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomSeed:
    value: int
    stream_id: int = 0
    sub: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.value <= _MASK64:
            raise ValueError(f"seed value must be a 64-bit unsigned integer, got {self.value}")
        if self.stream_id < 0 or any(s < 0 for s in self.sub):
            raise ValueError("stream ids must be non-negative")

    def child(self, *keys: int) -> RandomSeed:
        """Independent sub-stream, e.g. one per path inside a trial."""
        return RandomSeed(self.value, self.stream_id, self.sub + tuple(int(k) for k in keys))

    def stream(self, stream_id: int) -> RandomSeed:
        return RandomSeed(self.value, int(stream_id))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.value, spawn_key=(self.stream_id, *self.sub))
        return np.random.Generator(np.random.Philox(ss))


def as_generator(seed: RandomSeed | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return seed.generator()
