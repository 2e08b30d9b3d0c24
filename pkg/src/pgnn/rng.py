"""Deterministic seed derivation and PRNG construction.

All randomness in the package flows through numpy's PCG64, a documented
counter-based 64-bit generator. Named sub-streams are derived by hashing the
label parts, so e.g. data generation and weight init never share a stream.
"""

import hashlib

import numpy as np

PRNG_NAME = "pcg64"


def derive_seed(*parts: str | int) -> int:
    """Map a label tuple (experiment name, seed index, stream name, ...) to a 64-bit seed."""
    canon = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(canon.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(*parts: str | int) -> np.random.Generator:
    """Generator seeded from the derived 64-bit seed for the given label parts."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
