"""Seeded random streams.

All randomness goes through numpy's Philox counter-based bit generator, which
produces the same stream for the same seed on every platform.
"""
import hashlib

import numpy as np


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(seed, *tags):
    """Stable 64-bit child seed for a named sub-stream."""
    key = ":".join([str(int(seed))] + [str(t) for t in tags]).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
