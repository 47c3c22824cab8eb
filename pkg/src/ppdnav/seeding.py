"""Deterministic RNG streams derived from a base seed and string tags."""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_stream(base_seed: int, *tags) -> np.random.Generator:
    """Independent PCG64 stream for (base_seed, tags), stable across runs and platforms."""
    entropy = [int(base_seed)] + [_tag_to_int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
