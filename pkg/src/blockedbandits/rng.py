"""Named, independent random streams derived from one master seed.

Every stochastic component of a run (instance generation, policy decisions,
reward noise) pulls from its own stream so that, e.g., two policies compared
on the same seed see identical instances and identical noise tables no matter
how many random decisions each policy makes.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream"]


def _name_words(name: str) -> tuple[int, ...]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=16).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def stream(master_seed: int, name: str) -> np.random.Generator:
    """Return the generator for stream ``name`` under ``master_seed``.

    Calls with the same (seed, name) pair always return an identically
    seeded generator; distinct names give statistically independent streams.
    """
    entropy = (int(master_seed) & 0xFFFFFFFFFFFFFFFF,) + _name_words(name)
    return np.random.default_rng(np.random.SeedSequence(entropy))
