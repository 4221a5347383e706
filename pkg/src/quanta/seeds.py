"""Keyed seed derivation and counter-based random streams.

Every stochastic component draws from its own Philox stream keyed by a hash
of (master seed, stream name, ...), so results do not depend on the order in
which jobs run.
"""

from __future__ import annotations

import hashlib

import numpy as np

STREAMS = ("data", "init", "shuffle", "eval", "kmeans", "subsets", "toy")


def derive_seed(seed: int, *names) -> int:
    """64-bit sub-seed from a master seed and a path of names."""
    h = hashlib.blake2b(digest_size=8, key=b"quanta-seeds")
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *names) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, *names)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *names)))


def named_seeds(master: int) -> dict[str, int]:
    """The standard named sub-seeds recorded in manifests."""
    return {name: derive_seed(master, name) for name in STREAMS}
