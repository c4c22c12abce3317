"""Platform-independent random streams.

Every stochastic step draws from a Philox (counter-based) generator keyed by
an integer seed plus string tags, so that e.g. the split of scene 3 never
shares a stream with its splat sampling.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_word(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Return a fresh Philox generator for ``(seed, *tags)``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    words = [seed & 0xFFFFFFFF, seed >> 32] + [_tag_word(t) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
