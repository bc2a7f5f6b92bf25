"""Named, splittable random streams.

Every stochastic operation in the toolkit takes an explicit stream.  Streams
are derived from a root seed plus a path of keys (strings or integers), so
independent subsystems (channel synthesis per location, campaign repetitions)
get decorrelated, reproducible randomness:

    substream(42, "channel", 17)   # location 17 of the world built with seed 42
    substream(42, "campaign", 50, 999)  # repetition 999 of the D=50 campaign
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(key: int | str) -> list[int]:
    """Map a key to uint32 words for SeedSequence entropy."""
    if isinstance(key, bool):
        raise TypeError("bool is not a valid stream key")
    if isinstance(key, int):
        if key < 0:
            key = (-key << 1) | 1
        else:
            key <<= 1
        words = []
        while True:
            words.append(key & 0xFFFFFFFF)
            key >>= 32
            if key == 0:
                return words
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()[:8]
        value = int.from_bytes(digest, "little")
        return [value & 0xFFFFFFFF, value >> 32]
    raise TypeError(f"stream keys must be int or str, got {type(key).__name__}")


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return a deterministic generator for (seed, *keys)."""
    entropy: list[int] = []
    for key in (seed, *keys):
        entropy.extend(_key_words(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))
