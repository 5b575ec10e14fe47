"""Named random streams derived from one integer seed."""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np


def rng_for(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *keys)``; string keys are CRC-32 hashed.

    Streams never share state, so results do not depend on the order in
    which samples or epochs are visited.
    """
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))
