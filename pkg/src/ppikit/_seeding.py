"""Deterministic seed derivation shared by labelers, tuning and the harness."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash an arbitrary tuple of printable parts into a 63-bit seed.

    ``None`` in the first position is passed through as fresh entropy so that
    unseeded calls stay unseeded.
    """
    if parts and parts[0] is None:
        return int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> np.uint64(1))
    h = hashlib.blake2b("\x1f".join(repr(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
