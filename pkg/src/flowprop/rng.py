"""Counter-based random streams.

Every random quantity in the pipeline is drawn from a stream keyed by
(global_seed, purpose, index), so any single step or sample can be
regenerated without replaying the whole run. Streams are backed by
Philox, which is counter-based and stable across platforms for a fixed
numpy major version.
"""

from __future__ import annotations

import hashlib

import numpy as np


def purpose_key(purpose: str) -> int:
    """Stable 64-bit key for a purpose label (process-hash independent)."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, index)."""
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    ss = np.random.SeedSequence(
        entropy=int(seed) & (2**64 - 1),
        spawn_key=(purpose_key(purpose), int(index)),
    )
    return np.random.Generator(np.random.Philox(ss))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed for a derived stream."""
    return int(rng.integers(0, 2**63))
