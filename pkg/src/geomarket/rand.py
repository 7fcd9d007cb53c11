"""Seedable deterministic random bit generator (SHAKE-256 in counter mode)."""

from __future__ import annotations

import hashlib
import os

import gmpy2


class Drbg:
    """Deterministic when seeded, fresh OS entropy otherwise.

    Every call advances the stream, so two draws never repeat even when the
    generator was seeded; that is what keeps per-call randomness fresh while
    test runs stay reproducible.
    """

    def __init__(self, seed: bytes | str | int | None = None):
        if seed is None:
            seed = os.urandom(32)
        elif isinstance(seed, int):
            seed = seed.to_bytes((seed.bit_length() + 8) // 8, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        self._seed = hashlib.sha256(b"geomarket-drbg" + seed).digest()
        self._counter = 0

    def bytes(self, n: int) -> bytes:
        out = hashlib.shake_256(self._seed + self._counter.to_bytes(8, "big")).digest(n)
        self._counter += 1
        return out

    def randbits(self, k: int) -> int:
        v = int.from_bytes(self.bytes((k + 7) // 8), "big")
        return v >> (-k % 8)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        k = n.bit_length()
        while True:
            v = self.randbits(k)
            if v < n:
                return v

    def randrange(self, lo: int, hi: int) -> int:
        return lo + self.randbelow(hi - lo)

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def fork(self, label: bytes | str) -> "Drbg":
        """Independent child stream, derived deterministically from this one."""
        if isinstance(label, str):
            label = label.encode()
        return Drbg(self.bytes(32) + label)


def as_drbg(rng: "Drbg | bytes | str | int | None") -> Drbg:
    return rng if isinstance(rng, Drbg) else Drbg(rng)


def random_prime(bits: int, rng: Drbg) -> int:
    """Prime of exactly ``bits`` bits drawn from ``rng``."""
    while True:
        cand = rng.randbits(bits) | (1 << (bits - 1)) | 1
        p = int(gmpy2.next_prime(cand - 2))
        if p.bit_length() == bits:
            return p
