"""Seed derivation for independent, order-free random streams."""

import hashlib

import numpy as np


def derive_seed(seed: int, *keys: object) -> int:
    """Hash a base seed and any number of keys into a 64-bit seed."""
    text = "/".join([str(int(seed)), *(str(k) for k in keys)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    """Return a Generator whose stream depends only on (seed, keys).

    Streams for different keys are independent, so a task's randomness does not
    depend on which other tasks ran before it.
    """
    return np.random.default_rng(derive_seed(seed, *keys))
