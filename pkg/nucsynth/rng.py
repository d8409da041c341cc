from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(*parts: int) -> int:
    """64-bit blake2b digest of unsigned integers; identical on every platform and process."""
    payload = b"".join(struct.pack("<Q", int(p) & _MASK64) for p in parts)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SeededRng:
    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence([self.master_seed & _MASK64, self.stream_id & _MASK64])
        return np.random.default_rng(seq)

    def child(self, key: int) -> "SeededRng":
        return SeededRng(self.master_seed, stable_hash(self.stream_id, key))


def image_stream(master_seed: int, index: int) -> SeededRng:
    return SeededRng(master_seed, stable_hash(master_seed, index))
