"""
Named random streams.

Every consumer draws from its own substream of the run seed, so adding draws
to one purpose ("crop", "timestep", "noise", "init", ...) never shifts another.
"""
import zlib

import numpy as np


def _key(part) -> int:
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, name: str, *extra) -> np.random.Generator:
    """
    Generator for purpose ``name`` under ``seed``

    Args:
        seed: Run seed
        name: Stream purpose
        extra: Further qualifiers (file name, level, iteration, ...)

    Returns:
        Independent, reproducible numpy Generator
    """
    entropy = [int(seed) & 0xFFFFFFFF, _key(name)] + [_key(e) for e in extra]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, name: str, *extra) -> int:
    """Integer seed for APIs that take a plain seed"""
    return int(substream(seed, name, *extra).integers(0, 2**31 - 1))
