"""Named random sub-streams derived from one master seed."""
from __future__ import annotations

import hashlib

import numpy as np

STREAMS = {"data": 0, "init": 1, "shuffle": 2, "dropout": 3, "mc": 4}


def stable_hash(text: str) -> int:
    """Process-independent 63-bit hash of a string."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little") >> 1


def _key(part) -> int:
    if isinstance(part, str):
        return stable_hash(part)
    return int(part)


def seed_sequence(master_seed: int, stream: str, *keys) -> np.random.SeedSequence:
    if stream not in STREAMS:
        raise KeyError(f"unknown random stream {stream!r}")
    entropy = [int(master_seed), STREAMS[stream], *(_key(k) for k in keys)]
    return np.random.SeedSequence(entropy)


def rng_for(master_seed: int, stream: str, *keys) -> np.random.Generator:
    """Generator for ``stream`` keyed by arbitrary ints/strings.

    The same (seed, stream, keys) always yields the same generator, so work
    can be split or reordered without changing results.
    """
    return np.random.default_rng(seed_sequence(master_seed, stream, *keys))


def derive_seed(master_seed: int, stream: str, *keys) -> int:
    return int(seed_sequence(master_seed, stream, *keys).generate_state(1, np.uint64)[0] >> 1)
