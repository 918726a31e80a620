"""Named, index-addressable random streams derived from a single seed."""

import zlib

import numpy as np

DEFAULT_SEED = 20240201


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
