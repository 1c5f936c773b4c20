"""Deterministic derivation of named random streams from one global seed.

Every stochastic component takes an explicit seed or Generator. Child
streams are derived from (seed, tag, tag, ...) so that parallel order can
never change results: the stream for ("train", "udp-pgd", replica 3) is
the same whether it runs first or last.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def child_seed(seed: int, *tags) -> int:
    """Collapse (seed, tags...) into a single stable 32-bit seed."""
    h = int(seed) & _MASK32
    for tag in tags:
        h = zlib.crc32(str(tag).encode("utf-8"), h) & _MASK32
    return h


def child_rng(seed: int, *tags) -> np.random.Generator:
    """A fresh Generator for the named sub-stream of `seed`."""
    entropy = [int(seed) & _MASK32]
    entropy.extend(zlib.crc32(str(t).encode("utf-8")) & _MASK32 for t in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy))
