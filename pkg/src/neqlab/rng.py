"""Counter-based random number streams.

Streams are keyed by (master_seed, stream_id) on top of the Philox counter
generator: distinct stream ids give statistically independent sequences, and
the same pair reproduces the same bits on any platform or worker order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.master_seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))


def derive_stream(master_seed: int, purpose: str, index: int = 0) -> RngStream:
    """Derive a stream id by hashing a purpose label.

    Trajectory streams use stream_id = trajectory index directly; every other
    consumer derives its id here so the two id spaces cannot collide.
    """
    digest = hashlib.blake2s(f"{purpose}:{index}".encode()).digest()
    return RngStream(master_seed, int.from_bytes(digest[:8], "little"))


def as_generator(rng) -> np.random.Generator:
    """Accept either an RngStream or an already-running Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")
