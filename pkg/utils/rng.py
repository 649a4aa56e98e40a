"""
Random Stream Utilities
-----------------------
Splittable counter-based random streams.

Every stream is a numpy Generator over the Philox bit generator. A stream is
identified by a master seed plus a spawn key; the split function below is the
only way replicate and sub-task streams are derived, so results depend on
(master_seed, replicate, keys) and never on execution order.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return int(key)


def make_stream(seed: int, *keys: Key) -> np.random.Generator:
    """
    Create a Philox stream for a seed and an optional spawn key path

    Args:
        seed: Master seed (non-negative integer)
        keys: Spawn key path; strings are hashed with CRC-32

    Returns:
        numpy Generator
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def replicate_stream(master_seed: int, replicate: int, *keys: Key) -> np.random.Generator:
    """Stream for one replicate, optionally split further by named keys"""
    return make_stream(master_seed, replicate, *keys)


def child_stream(rng: np.random.Generator, *keys: Key) -> np.random.Generator:
    """
    Derive an independent stream from an existing one by drawing a child seed

    The parent advances by one draw, so the child is a deterministic function
    of the parent's state and the keys.
    """
    seed = int(rng.integers(0, 2 ** 63 - 1))
    return make_stream(seed, *keys)
