"""Deterministic hierarchical seeding.

Every stochastic stage derives its generator from a single master seed plus a
path of stage tags, so runs reproduce bit-for-bit regardless of which stages
execute or in what order.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["seed_seq", "rng", "as_seed_seq"]


def _token(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"seed path entries must be non-negative, got {part}")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def seed_seq(*path: int | str) -> np.random.SeedSequence:
    """Build a SeedSequence from a master seed followed by stage tags."""
    if not path:
        raise ValueError("seed path must not be empty")
    return np.random.SeedSequence([_token(p) for p in path])


def rng(*path: int | str) -> np.random.Generator:
    return np.random.default_rng(seed_seq(*path))


def as_seed_seq(seed: int | np.random.SeedSequence) -> np.random.SeedSequence:
    """Accept either a bare integer or an existing SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return seed_seq(seed)
