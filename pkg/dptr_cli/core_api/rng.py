# dptr_cli/core_api/rng.py
"""Counter-based random streams keyed by (seed, purpose, indices).

Each stream is a Philox generator seeded from a SeedSequence whose spawn key
encodes the purpose and the caller's indices, so the draws seen by one
replication never depend on which worker ran it or in what order.
"""
import logging
import zlib
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)

_UINT32 = 0xFFFFFFFF


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8")) & _UINT32


def spawn_key(purpose: str, *indices: int) -> Tuple[int, ...]:
    return (_purpose_key(purpose),) + tuple(int(i) for i in indices)


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Returns an independent Philox generator for (seed, purpose, *indices)."""
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(purpose, *indices))
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, purpose: str, *indices: int) -> int:
    """Derives a 63-bit child seed, for components that take an integer seed."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(purpose, *indices))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
