"""Hierarchical, collision-resistant RNG streams.

Every random decision in the pipeline draws from a stream keyed by a path of
labels under one master seed, e.g. ``stream(master, "sweep", mix_id, trial,
"train")``. Streams with different paths are independent, so adding work in
one stage never perturbs another, and any single experiment cell can be
re-run in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "stream"]


def derive_seed(*path: object) -> int:
    """Map a label path to a stable 64-bit seed via SHA-256."""
    key = "\x1f".join(str(p) for p in path)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(*path: object) -> np.random.Generator:
    """Independent PCG64 generator for the given label path."""
    return np.random.Generator(np.random.PCG64(derive_seed(*path)))
