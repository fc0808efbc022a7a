"""
Seeded counter-based random streams
"""
import zlib
from typing import Union

import numpy as np

Key = Union[str, int]


def _key_word(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode('utf-8'))


def seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    """Entropy = (seed, keys...) so every named purpose gets its own stream"""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_word(k) for k in keys])


def make_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Philox generator derived from ``seed`` and an arbitrary key path

    Example:
        make_rng(7, 'epoch', 3)   # batch order and dequantisation noise for epoch 3
    """
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))
