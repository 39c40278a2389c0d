"""Deterministic seed derivation.

A single master seed fans out to independent per-component seeds by
hashing ``"{seed}/{name}"`` with SHA-256 and taking the first eight bytes.
Streams for different components are therefore decorrelated, and adding a
new consumer never shifts the seeds of existing ones.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, name))
