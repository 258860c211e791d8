"""Stable seed derivation.

A derived seed is the first 8 bytes (big-endian) of
``sha256(f"{master}/{label}".encode("utf-8"))`` with the top bit cleared,
so every run replicates across machines and Python versions.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seeds(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(master)}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed by ``seed`` plus integer sub-keys (e.g. a round index)."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])
