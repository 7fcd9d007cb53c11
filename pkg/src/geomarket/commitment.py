"""RSA-based vector commitments (Catalano-Fiore) with hiding randomness.

Public parameters are an RSA modulus ``N``, a quadratic residue ``a`` and
``q`` distinct 257-bit primes ``e_1..e_q``.  With ``E = prod e_j`` and
``S_i = a^(E / e_i)``, a commitment to messages ``m_1..m_q`` under
randomness ``r`` is

    C = S_0^r * prod S_i^m_i,   S_0 = a^E

and the opening for position ``i`` is ``L_i`` with ``C = L_i^e_i * S_i^m_i``.
Messages are 256-bit hashes, so they always sit below every ``e_i``.

Since the parameters keep ``a`` and the primes, commit and open each
collapse into a single exponentiation of ``a``; nobody needs the
factorisation of ``N``, which is discarded after keygen.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property

import gmpy2

from .encoding import GridLocation
from .rand import Drbg, as_drbg, random_prime

PRIME_BITS = 257
MESSAGE_BITS = 256
HIDING_EXTRA_BITS = 128
PP_MAGIC = b"GVCP"


class CommitmentError(ValueError):
    pass


@dataclass(frozen=True)
class CommitmentParams:
    modulus: int
    a: int
    primes: tuple[int, ...]
    security_bits: int

    @property
    def q(self) -> int:
        return len(self.primes)

    @property
    def element_bytes(self) -> int:
        return (self.security_bits + 7) // 8

    @cached_property
    def exponent_product(self) -> int:
        out = gmpy2.mpz(1)
        for e in self.primes:
            out *= e
        return out

    @cached_property
    def bases(self) -> tuple[int, ...]:
        """``S_0..S_q``; ``S_0 = a^E`` carries the hiding randomness."""
        E = self.exponent_product
        exps = [E] + [E // e for e in self.primes]
        return tuple(int(gmpy2.powmod(self.a, x, self.modulus)) for x in exps)

    def base(self, i: int) -> int:
        return self.bases[i]

    def to_bytes(self) -> bytes:
        n = self.element_bytes
        pb = (PRIME_BITS + 7) // 8
        out = [PP_MAGIC, struct.pack(">HH", self.security_bits, self.q)]
        out += [self.modulus.to_bytes(n, "big"), self.a.to_bytes(n, "big")]
        out += [e.to_bytes(pb, "big") for e in self.primes]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CommitmentParams":
        if data[:4] != PP_MAGIC:
            raise CommitmentError("not commitment parameters")
        bits, q = struct.unpack_from(">HH", data, 4)
        n = (bits + 7) // 8
        pb = (PRIME_BITS + 7) // 8
        if len(data) != 8 + 2 * n + q * pb:
            raise CommitmentError("bad parameter length")
        pos = 8
        modulus = int.from_bytes(data[pos : pos + n], "big")
        a = int.from_bytes(data[pos + n : pos + 2 * n], "big")
        pos += 2 * n
        primes = tuple(int.from_bytes(data[pos + k * pb : pos + (k + 1) * pb], "big") for k in range(q))
        return cls(modulus, a, primes, bits)

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


@dataclass(frozen=True)
class CommitMessage:
    """A grid cell packed as ``x << 32 | y`` plus the object id it belongs to."""

    word: int
    oid: str

    def __post_init__(self):
        if not 0 <= self.word < 1 << 64:
            raise CommitmentError("coordinate word must fit in 64 bits")

    @property
    def x(self) -> int:
        return self.word >> 32

    @property
    def y(self) -> int:
        return self.word & 0xFFFFFFFF

    def encode(self) -> bytes:
        oid = self.oid.encode()
        return struct.pack(">QH", self.word, len(oid)) + oid


def encode_location_message(loc: GridLocation, oid: str) -> CommitMessage:
    if not (0 <= loc.x < 1 << 32 and 0 <= loc.y < 1 << 32):
        raise CommitmentError("cell coordinates must fit in 32 bits")
    return CommitMessage((loc.x << 32) | loc.y, oid)


def message_exponent(m: CommitMessage, i: int) -> int:
    """Hash a message to a 256-bit exponent, separated by its 1-based position."""
    h = hashlib.sha256(b"vc-msg" + struct.pack(">I", i) + m.encode()).digest()
    return int.from_bytes(h, "big")


@dataclass
class CommitAux:
    """Owner-held opening state: the committed messages and the hiding randomness."""

    pp: CommitmentParams
    messages: list[CommitMessage]
    r: int
    exponents: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.exponents:
            self.exponents = [message_exponent(m, i + 1) for i, m in enumerate(self.messages)]


def vc_keygen(security_bits: int = 1024, q: int = 20, seed=None) -> CommitmentParams:
    if q < 1:
        raise CommitmentError("batch capacity q must be at least 1")
    if security_bits < 256 or security_bits % 16:
        raise CommitmentError("modulus size must be a multiple of 16, at least 256 bits")
    rng = as_drbg(seed)
    half = security_bits // 2
    while True:
        p, p2 = random_prime(half, rng), random_prime(half, rng)
        n = p * p2
        if p != p2 and n.bit_length() == security_bits:
            break
    while True:
        x = rng.randbelow(n)
        if x > 1 and gmpy2.gcd(x, n) == 1:
            break
    a = int(gmpy2.powmod(x, 2, n))
    primes: list[int] = []
    while len(primes) < q:
        e = random_prime(PRIME_BITS, rng)
        if e not in primes:
            primes.append(e)
    return CommitmentParams(n, a, tuple(primes), security_bits)


def _commit_exponent(pp: CommitmentParams, exps: list[int], r: int, skip: int | None = None) -> int:
    """Exponent of ``a`` in ``C`` (``skip=None``) or in the opening ``L_skip``."""
    E = pp.exponent_product
    if skip is None:
        total = r * E
        for i, m in enumerate(exps):
            total += m * (E // pp.primes[i])
        return total
    e_i = pp.primes[skip]
    total = r * (E // e_i)
    for j, m in enumerate(exps):
        if j != skip:
            total += m * (E // (e_i * pp.primes[j]))
    return total


def vc_commit(pp: CommitmentParams, messages: list[CommitMessage], rng=None) -> tuple[bytes, CommitAux]:
    """Commit to up to ``q`` messages; unused positions commit to zero."""
    if not messages:
        raise CommitmentError("nothing to commit")
    if len(messages) > pp.q:
        raise CommitmentError(f"{len(messages)} messages exceed batch capacity {pp.q}")
    rng = as_drbg(rng)
    r = rng.randbits(pp.security_bits + HIDING_EXTRA_BITS)
    aux = CommitAux(pp, list(messages), r)
    c = gmpy2.powmod(pp.a, _commit_exponent(pp, aux.exponents, r), pp.modulus)
    return int(c).to_bytes(pp.element_bytes, "big"), aux


def vc_open(aux: CommitAux, m: CommitMessage, i: int) -> bytes:
    """Proof that ``m`` is the message at 1-based position ``i``."""
    pp = aux.pp
    if not 1 <= i <= len(aux.messages):
        raise CommitmentError(f"position {i} was not committed")
    if aux.messages[i - 1] != m:
        raise CommitmentError("message differs from the committed one")
    lam = gmpy2.powmod(pp.a, _commit_exponent(pp, aux.exponents, aux.r, skip=i - 1), pp.modulus)
    return int(lam).to_bytes(pp.element_bytes, "big")


def vc_verify(pp: CommitmentParams, cc: bytes, m: CommitMessage, i: int, proof: bytes) -> bool:
    n = pp.element_bytes
    if len(cc) != n or len(proof) != n or not 1 <= i <= pp.q:
        return False
    c = int.from_bytes(cc, "big")
    lam = int.from_bytes(proof, "big")
    if not (0 < c < pp.modulus and 0 < lam < pp.modulus):
        return False
    e_i = pp.primes[i - 1]
    rhs = gmpy2.powmod(lam, e_i, pp.modulus) * gmpy2.powmod(pp.base(i), message_exponent(m, i), pp.modulus)
    return int(rhs % pp.modulus) == c


def random_messages(count: int, rng: Drbg | None = None, grid: int = 1 << 32) -> list[CommitMessage]:
    rng = as_drbg(rng)
    return [
        encode_location_message(GridLocation(rng.randbelow(grid), rng.randbelow(grid)), rng.bytes(8).hex())
        for _ in range(count)
    ]
