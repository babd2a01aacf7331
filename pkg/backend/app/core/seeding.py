"""Named, seedable random streams"""

import zlib

import numpy as np


def make_rng(seed: int, stream: str = "") -> np.random.Generator:
    """Generator for one named stream derived from a base seed.

    Streams with different names are statistically independent, so drawing
    from one never shifts another.
    """
    key = zlib.crc32(stream.encode("utf-8")) if stream else 0
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))
