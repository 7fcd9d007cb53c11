"""Symmetric bilinear groups of composite order n = p*q.

Two interchangeable backends share one interface:

``ExponentGroup``
    G is represented by discrete logarithms with respect to a fixed
    generator, so the pairing is a single modular exponentiation in a
    multiplicative subgroup of Z_P^*.  Algebraically exact and fast, and
    completely insecure (discrete logs are the representation).  Used for
    correctness tests and desk-scale benchmarks.

``CurveGroup``
    The order-n subgroup of the supersingular curve y^2 = x^3 + x over F_P,
    P = 3 (mod 4), with the reduced Tate pairing composed with the
    distortion map (x, y) -> (-x, i*y).  Real pairing arithmetic, in pure
    Python, so slow at large parameters.

Group elements are written multiplicatively throughout: ``mul``, ``pow``,
``pair``, ``gt_mul``, ``gt_pow``.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from functools import cached_property

import gmpy2

from ..rand import Drbg, as_drbg, random_prime


class GroupError(ValueError):
    pass


class BilinearGroup(ABC):
    backend: str
    n: int
    p: int
    q: int

    # --- G ---------------------------------------------------------------
    @property
    @abstractmethod
    def identity(self): ...

    @property
    @abstractmethod
    def generator(self): ...

    @abstractmethod
    def mul(self, a, b): ...

    @abstractmethod
    def pow(self, a, k: int): ...

    # --- pairing and G_T -------------------------------------------------
    @abstractmethod
    def pair(self, a, b): ...

    @property
    @abstractmethod
    def gt_one(self): ...

    @abstractmethod
    def gt_mul(self, a, b): ...

    @abstractmethod
    def gt_pow(self, a, k: int): ...

    @abstractmethod
    def gt_inv(self, a): ...

    # --- serialization ---------------------------------------------------
    @abstractmethod
    def to_bytes(self, a) -> bytes: ...

    @abstractmethod
    def from_bytes(self, data: bytes): ...

    @abstractmethod
    def gt_to_bytes(self, a) -> bytes: ...

    @abstractmethod
    def gt_from_bytes(self, data: bytes): ...

    @abstractmethod
    def public_params(self) -> dict: ...

    @property
    def element_size(self) -> int:
        return len(self.to_bytes(self.generator))

    @property
    def gt_size(self) -> int:
        return len(self.gt_to_bytes(self.gt_one))

    @cached_property
    def fingerprint(self) -> bytes:
        blob = repr(sorted(self.public_params().items())).encode()
        return hashlib.sha256(blob).digest()[:16]

    # --- derived helpers -------------------------------------------------
    @property
    def gen_p(self):
        """Generator of the order-p subgroup G_p."""
        return self.pow(self.generator, self.q)

    @property
    def gen_q(self):
        """Generator of the order-q subgroup G_q."""
        return self.pow(self.generator, self.p)

    def random_scalar(self, rng: Drbg, modulus: int | None = None) -> int:
        return 1 + rng.randbelow((modulus or self.n) - 1)

    def random_g(self, rng: Drbg):
        return self.pow(self.generator, self.random_scalar(rng))

    def random_gp(self, rng: Drbg):
        return self.pow(self.gen_p, self.random_scalar(rng, self.p))

    def random_gq(self, rng: Drbg):
        return self.pow(self.gen_q, self.random_scalar(rng, self.q))

    def gt_div(self, a, b):
        return self.gt_mul(a, self.gt_inv(b))

    def hash_to_scalar(self, data: bytes) -> int:
        digest = hashlib.shake_256(b"h2s" + data).digest(self.n.bit_length() // 8 + 16)
        return 1 + int.from_bytes(digest, "big") % (self.n - 1)


def _scalar_bytes(n: int) -> int:
    return (n.bit_length() + 7) // 8


class ExponentGroup(BilinearGroup):
    """Insecure logarithm-represented bilinear group (see module docstring)."""

    backend = "exponent"

    def __init__(self, p: int, q: int, P: int, gt_gen: int):
        self.p, self.q = p, q
        self.n = p * q
        self.P = P
        self._gt_gen = gmpy2.mpz(gt_gen)
        self._Pz = gmpy2.mpz(P)
        self._nb = _scalar_bytes(self.n)
        self._Pb = _scalar_bytes(P)

    @classmethod
    def generate(cls, bits: int, rng) -> "ExponentGroup":
        rng = as_drbg(rng)
        if bits < 16:
            raise GroupError("composite order needs at least 16 bits")
        while True:
            p = random_prime(bits // 2, rng)
            q = random_prime(bits - bits // 2, rng)
            if p != q:
                break
        n = p * q
        k = 2
        while not gmpy2.is_prime(k * n + 1):
            k += 2
        P = k * n + 1
        while True:
            x = 2 + rng.randbelow(P - 3)
            g = pow(x, k, P)
            if g != 1 and pow(g, n // p, P) != 1 and pow(g, n // q, P) != 1:
                return cls(p, q, P, g)

    @property
    def identity(self):
        return 0

    @property
    def generator(self):
        return 1

    def mul(self, a, b):
        return (a + b) % self.n

    def pow(self, a, k):
        return (a * k) % self.n

    def pair(self, a, b):
        return int(gmpy2.powmod(self._gt_gen, (a * b) % self.n, self._Pz))

    @property
    def gt_one(self):
        return 1

    def gt_mul(self, a, b):
        return (a * b) % self.P

    def gt_pow(self, a, k):
        return int(gmpy2.powmod(a, k, self._Pz))

    def gt_inv(self, a):
        return int(gmpy2.invert(a, self._Pz))

    def to_bytes(self, a):
        return int(a).to_bytes(self._nb, "big")

    def from_bytes(self, data):
        v = int.from_bytes(data, "big")
        if v >= self.n:
            raise GroupError("element out of range")
        return v

    def gt_to_bytes(self, a):
        return int(a).to_bytes(self._Pb, "big")

    def gt_from_bytes(self, data):
        return int.from_bytes(data, "big")

    def public_params(self):
        return {"backend": self.backend, "n": self.n, "P": self.P, "gt": int(self._gt_gen)}


class CurveGroup(BilinearGroup):
    """Order-n subgroup of y^2 = x^3 + x over F_P with the distorted Tate pairing."""

    backend = "curve"

    def __init__(self, p: int, q: int, P: int, gen: tuple[int, int]):
        self.p, self.q = p, q
        self.n = p * q
        self.P = P
        self.h = (P + 1) // self.n
        self._Pz = gmpy2.mpz(P)
        self._gen = (int(gen[0]), int(gen[1]))
        self._fb = _scalar_bytes(P)

    @classmethod
    def generate(cls, bits: int, rng) -> "CurveGroup":
        rng = as_drbg(rng)
        if bits < 16:
            raise GroupError("composite order needs at least 16 bits")
        while True:
            p = random_prime(bits // 2, rng)
            q = random_prime(bits - bits // 2, rng)
            if p != q:
                break
        n = p * q
        h = 4
        # h = 0 (mod 4) makes P = h*n - 1 = 3 (mod 4)
        while not gmpy2.is_prime(h * n - 1):
            h += 4
        P = h * n - 1
        probe = cls(p, q, P, (0, 0))
        while True:
            x = rng.randbelow(P)
            rhs = (x * x * x + x) % P
            if rhs == 0 or gmpy2.legendre(rhs, P) != 1:
                continue
            y = int(gmpy2.powmod(rhs, (P + 1) // 4, P))
            g = probe._mul_scalar((x, y), h)
            if g is None:
                continue
            if probe._mul_scalar(g, n // p) is None or probe._mul_scalar(g, n // q) is None:
                continue
            assert probe._mul_scalar(g, n) is None
            return cls(p, q, P, g)

    # --- curve arithmetic ----------------------------------------------------
    def _add(self, A, B):
        if A is None:
            return B
        if B is None:
            return A
        P = self._Pz
        x1, y1 = A
        x2, y2 = B
        if x1 == x2:
            if (y1 + y2) % P == 0:
                return None
            lam = (3 * x1 * x1 + 1) * gmpy2.invert(2 * y1, P) % P
        else:
            lam = (y2 - y1) * gmpy2.invert(x2 - x1, P) % P
        x3 = (lam * lam - x1 - x2) % P
        return (x3, (lam * (x1 - x3) - y1) % P)

    def _mul_scalar(self, A, k):
        R = None
        k = int(k)
        if k < 0 or A is None:
            raise GroupError("bad scalar multiplication")
        while k:
            if k & 1:
                R = self._add(R, A)
            A = self._add(A, A)
            k >>= 1
        return R

    @property
    def identity(self):
        return None

    @property
    def generator(self):
        return self._gen

    def mul(self, a, b):
        r = self._add(a, b)
        return None if r is None else (int(r[0]), int(r[1]))

    def pow(self, a, k):
        if a is None:
            return None
        r = self._mul_scalar(a, int(k) % self.n)
        return None if r is None else (int(r[0]), int(r[1]))

    # --- F_P^2 = F_P[i]/(i^2 + 1) ------------------------------------------------
    def _f2mul(self, a, b):
        P = self._Pz
        return ((a[0] * b[0] - a[1] * b[1]) % P, (a[0] * b[1] + a[1] * b[0]) % P)

    def _f2sqr(self, a):
        P = self._Pz
        return ((a[0] + a[1]) * (a[0] - a[1]) % P, 2 * a[0] * a[1] % P)

    def _f2pow(self, a, k):
        r = (gmpy2.mpz(1), gmpy2.mpz(0))
        for bit in bin(int(k))[2:]:
            r = self._f2sqr(r)
            if bit == "1":
                r = self._f2mul(r, a)
        return r

    def _f2inv(self, a):
        P = self._Pz
        norm_inv = gmpy2.invert((a[0] * a[0] + a[1] * a[1]) % P, P)
        return (a[0] * norm_inv % P, (-a[1]) * norm_inv % P)

    def _line(self, T, lam, xq, yb):
        # l(Q) for Q = (xq, i*yb); vertical lines lie in F_P and vanish in the final exponentiation
        return ((-T[1] - lam * (xq - T[0])) % self._Pz, yb)

    def _miller(self, A, xq, yb):
        P = self._Pz
        f = (gmpy2.mpz(1), gmpy2.mpz(0))
        T = A
        for bit in bin(self.n)[3:]:
            f = self._f2sqr(f)
            if T is not None:
                lam = (3 * T[0] * T[0] + 1) * gmpy2.invert(2 * T[1], P) % P
                f = self._f2mul(f, self._line(T, lam, xq, yb))
                T = self._add(T, T)
            if bit == "1":
                if T is None:
                    T = A
                elif T[0] == A[0]:
                    if (T[1] + A[1]) % P == 0:
                        T = None
                    else:
                        lam = (3 * T[0] * T[0] + 1) * gmpy2.invert(2 * T[1], P) % P
                        f = self._f2mul(f, self._line(T, lam, xq, yb))
                        T = self._add(T, A)
                else:
                    lam = (A[1] - T[1]) * gmpy2.invert(A[0] - T[0], P) % P
                    f = self._f2mul(f, self._line(T, lam, xq, yb))
                    T = self._add(T, A)
        return f

    def pair(self, a, b):
        if a is None or b is None:
            return self.gt_one
        P = self._Pz
        A = (gmpy2.mpz(a[0]), gmpy2.mpz(a[1]))
        f = self._miller(A, (-b[0]) % P, gmpy2.mpz(b[1]))
        # f^(P^2-1)/n = (conj(f)/f)^h
        conj = (f[0], (-f[1]) % P)
        u = self._f2mul(conj, self._f2inv(f))
        r = self._f2pow(u, self.h)
        return (int(r[0]), int(r[1]))

    @property
    def gt_one(self):
        return (1, 0)

    def gt_mul(self, a, b):
        r = self._f2mul((gmpy2.mpz(a[0]), gmpy2.mpz(a[1])), b)
        return (int(r[0]), int(r[1]))

    def gt_pow(self, a, k):
        r = self._f2pow((gmpy2.mpz(a[0]), gmpy2.mpz(a[1])), int(k) % self.n)
        return (int(r[0]), int(r[1]))

    def gt_inv(self, a):
        r = self._f2inv((gmpy2.mpz(a[0]), gmpy2.mpz(a[1])))
        return (int(r[0]), int(r[1]))

    def to_bytes(self, a):
        if a is None:
            return b"\x00" * (2 * self._fb + 1)
        return b"\x04" + int(a[0]).to_bytes(self._fb, "big") + int(a[1]).to_bytes(self._fb, "big")

    def from_bytes(self, data):
        if len(data) != 2 * self._fb + 1:
            raise GroupError("bad point encoding length")
        if data[0] == 0:
            return None
        x = int.from_bytes(data[1 : 1 + self._fb], "big")
        y = int.from_bytes(data[1 + self._fb :], "big")
        if (y * y - x * x * x - x) % self.P:
            raise GroupError("point not on curve")
        return (x, y)

    def gt_to_bytes(self, a):
        return int(a[0]).to_bytes(self._fb, "big") + int(a[1]).to_bytes(self._fb, "big")

    def gt_from_bytes(self, data):
        return (int.from_bytes(data[: self._fb], "big"), int.from_bytes(data[self._fb :], "big"))

    def public_params(self):
        return {"backend": self.backend, "n": self.n, "P": self.P, "g": self._gen}


BACKENDS = {"exponent": ExponentGroup, "curve": CurveGroup}


def group_setup(bits: int = 128, seed=None, backend: str = "exponent") -> BilinearGroup:
    """Generate a composite-order bilinear group with an n of ``bits`` bits."""
    try:
        cls = BACKENDS[backend]
    except KeyError:
        raise GroupError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}") from None
    return cls.generate(bits, as_drbg(seed))
