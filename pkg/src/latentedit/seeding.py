"""Deterministic seed derivation.

Every random stream is derived from a master seed plus a path of keys, so
results never depend on call order or on how work is split across threads.
"""

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def derive_seed(master: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master)] + [_key(k) for k in keys])


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


def int_seed(master: int, *keys) -> int:
    return int(derive_seed(master, *keys).generate_state(1, dtype=np.uint32)[0])
