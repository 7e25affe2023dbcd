"""Deterministic random streams derived from one root seed.

Every stochastic call site in the package takes an explicit
``numpy.random.Generator``. Streams are built on the counter-based Philox
bit generator, keyed by a stable hash of ``(seed, stream name)``, so any
stream can be re-derived independently of draw order elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngPool:
    """Splittable pool of named Philox streams."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, name: str) -> np.random.Generator:
        """Return a fresh generator for ``name``, independent of other streams."""
        digest = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, name: str) -> "RngPool":
        """Derive a sub-pool, useful for handing a namespace to a component."""
        digest = hashlib.sha256(f"{self.seed}:{name}:pool".encode()).digest()
        return RngPool(int.from_bytes(digest[:8], "little"))
