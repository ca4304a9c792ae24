"""Deterministic seed derivation.

Every random stream in a run is derived from the single run seed by
domain-separated hashing of ``(seed, label, index)``, so independent
components never share or race on one generator and any stream can be
reconstructed in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(seed: int, label: str, index: int = 0) -> int:
    """Derive a 64-bit child seed from (seed, label, index)."""
    msg = f"{seed}|{label}|{index}".encode()
    return int.from_bytes(hashlib.sha256(msg).digest()[:8], "little")


def make_rng(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """A PCG64 generator on the domain-separated child stream."""
    return np.random.default_rng(child_seed(seed, label, index))
