"""Deterministic random streams keyed by (seed, purpose, indices).

Every random draw in the package comes from a generator built here. A stream
is a Philox generator whose key is derived from the root seed and a tuple of
labels, so the draws for one (repeat, fold, chain, ...) never depend on how
many other streams were consumed or in which order they were evaluated.
"""

import zlib

import numpy as np


def _label(part):
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream indices must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed, *labels):
    """SeedSequence for ``seed`` specialised by ``labels`` (ints or strings)."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_label(p) for p in labels))


def stream(seed, *labels):
    """Independent counter-based generator for ``(seed, *labels)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *labels)))


def derive_seed(seed, *labels):
    """A 63-bit integer seed derived from ``(seed, *labels)``."""
    return int(seed_sequence(seed, *labels).generate_state(2, np.uint64)[0] >> np.uint64(1))
