"""Deterministic random-number derivation.

Every stochastic choice in the pipeline descends from one integer seed plus a
stable sequence of tags, hashed with SHA-256 (never Python's salted `hash`),
so identical seeds reproduce identical runs bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Collapse a seed plus context tags into one 64-bit integer."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng(*parts) -> np.random.Generator:
    """A PCG64 generator seeded from the given seed/tag chain."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
