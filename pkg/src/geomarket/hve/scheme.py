"""Hidden vector encryption and the per-level spatial matching built on it.

Keys, ciphertexts and tokens follow the Boneh-Waters construction over a
composite-order group; a width-1 attribute is enough for the spatial
encoding because every (x, y) node pair collapses to one scalar.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence
import multiprocessing as mp

from ..encoding import DomainParams, GridLocation, SpatialRange, hve_level_values, hve_query_value
from ..rand import Drbg, as_drbg
from .group import BilinearGroup, GroupError

log = logging.getLogger(__name__)

WILDCARD = None


class HveError(ValueError):
    pass


class GroupMismatchError(HveError):
    pass


@dataclass
class MatchStats:
    pairings: int = 0
    evaluations: int = 0

    def add(self, other: "MatchStats"):
        self.pairings += other.pairings
        self.evaluations += other.evaluations


@dataclass
class HveSecretKey:
    group: BilinearGroup
    width: int
    g_q: object
    a: int
    u: list
    h: list
    w: list
    g: object
    v: object


@dataclass
class HvePublicKey:
    group: BilinearGroup
    width: int
    attribute_bound: int
    g_q: object
    V: object
    A: object
    U: list
    H: list
    W: list

    def to_bytes(self) -> bytes:
        G = self.group
        parts = [
            b"HVPK",
            G.fingerprint,
            struct.pack(">HI", self.width, (self.attribute_bound.bit_length() + 7) // 8),
            self.attribute_bound.to_bytes((self.attribute_bound.bit_length() + 7) // 8, "big"),
            G.to_bytes(self.g_q),
            G.to_bytes(self.V),
            G.gt_to_bytes(self.A),
        ]
        for i in range(self.width):
            parts += [G.to_bytes(self.U[i]), G.to_bytes(self.H[i]), G.to_bytes(self.W[i])]
        return b"".join(parts)

    @cached_property
    def sentinel(self):
        """Public G_T element every ciphertext encrypts; recovering it signals a match."""
        return self.group.gt_pow(self.A, self.group.hash_to_scalar(self.to_bytes()))

    @property
    def element_count(self) -> int:
        # g_q, V and 3 per position in G, plus A in G_T
        return 2 + 3 * self.width + 1


@dataclass
class HveCiphertext:
    level: int
    c_prime: object
    c0: object
    c1: list
    c2: list
    group_id: bytes

    @property
    def element_count(self) -> int:
        return 2 + 2 * len(self.c1)


@dataclass
class HveToken:
    pattern: tuple
    level: int
    k0: object
    k1: dict
    k2: dict
    group_id: bytes

    @property
    def positions(self) -> list[int]:
        return [i for i, v in enumerate(self.pattern) if v is not WILDCARD]


@dataclass
class ObjectCipherBundle:
    object_id: str
    ciphertexts: list[HveCiphertext] = field(default_factory=list)

    def at_level(self, level: int) -> HveCiphertext | None:
        for c in self.ciphertexts:
            if c.level == level:
                return c
        return None


def hve_setup(group: BilinearGroup, width: int = 1, attribute_bound: int | None = None, rng=None):
    """Key pair of the given width; attribute values must lie in ``[0, attribute_bound)``."""
    if width < 1:
        raise HveError("width must be at least 1")
    rng = as_drbg(rng)
    bound = attribute_bound or min(group.p, group.q)
    if bound > min(group.p, group.q):
        raise HveError("attribute bound must not exceed the subgroup orders")
    G = group
    g_q = G.gen_q
    a = G.random_scalar(rng, G.p)
    u = [G.random_gp(rng) for _ in range(width)]
    h = [G.random_gp(rng) for _ in range(width)]
    w = [G.random_gp(rng) for _ in range(width)]
    g = G.random_gp(rng)
    v = G.random_gp(rng)

    def blind(x):
        return G.mul(x, G.random_gq(rng))

    pk = HvePublicKey(
        group=G,
        width=width,
        attribute_bound=bound,
        g_q=g_q,
        V=blind(v),
        A=G.gt_pow(G.pair(g, v), a),
        U=[blind(x) for x in u],
        H=[blind(x) for x in h],
        W=[blind(x) for x in w],
    )
    sk = HveSecretKey(group=G, width=width, g_q=g_q, a=a, u=u, h=h, w=w, g=g, v=v)
    return sk, pk


def _as_vector(value, width: int) -> tuple:
    if isinstance(value, (list, tuple)):
        vec = tuple(value)
    else:
        vec = (value,)
    if len(vec) != width:
        raise HveError(f"expected a vector of width {width}, got {len(vec)}")
    return vec


def hve_encrypt(pk: HvePublicKey, attribute, level: int = 0, message=None, rng=None) -> HveCiphertext:
    """Encrypt ``message`` (default: the public sentinel) under an attribute vector."""
    G = pk.group
    rng = as_drbg(rng)
    attr = _as_vector(attribute, pk.width)
    for x in attr:
        if not (isinstance(x, int) and 0 <= x < pk.attribute_bound):
            raise HveError(f"attribute {x!r} outside Z_{pk.attribute_bound}")
    M = pk.sentinel if message is None else message
    s = G.random_scalar(rng)
    z = lambda: G.pow(pk.g_q, G.random_scalar(rng, G.q))  # noqa: E731
    c1, c2 = [], []
    for i, x in enumerate(attr):
        base = G.mul(G.pow(pk.U[i], x), pk.H[i])
        c1.append(G.mul(G.pow(base, s), z()))
        c2.append(G.mul(G.pow(pk.W[i], s), z()))
    return HveCiphertext(
        level=level,
        c_prime=G.gt_mul(M, G.gt_pow(pk.A, s)),
        c0=G.mul(G.pow(pk.V, s), z()),
        c1=c1,
        c2=c2,
        group_id=G.fingerprint,
    )


def hve_token(sk: HveSecretKey, pattern, level: int = 0, rng=None) -> HveToken:
    G = sk.group
    rng = as_drbg(rng)
    pat = _as_vector(pattern, sk.width)
    k0 = G.pow(sk.g, sk.a)
    k1, k2 = {}, {}
    for i, x in enumerate(pat):
        if x is WILDCARD:
            continue
        r1 = G.random_scalar(rng, G.p)
        r2 = G.random_scalar(rng, G.p)
        term = G.mul(G.pow(G.mul(G.pow(sk.u[i], x), sk.h[i]), r1), G.pow(sk.w[i], r2))
        k0 = G.mul(k0, term)
        k1[i] = G.pow(sk.v, r1)
        k2[i] = G.pow(sk.v, r2)
    return HveToken(pattern=pat, level=level, k0=k0, k1=k1, k2=k2, group_id=G.fingerprint)


def hve_query(pk: HvePublicKey, c: HveCiphertext, tk: HveToken, stats: MatchStats | None = None):
    """Evaluate the query equation and return the recovered G_T element."""
    G = pk.group
    if c.group_id != G.fingerprint or tk.group_id != G.fingerprint:
        raise GroupMismatchError("ciphertext, token and key come from different groups")
    J = tk.positions
    if len(c.c1) != len(tk.pattern):
        raise HveError("ciphertext and token widths differ")
    num = G.pair(c.c0, tk.k0)
    den = G.gt_one
    for i in J:
        den = G.gt_mul(den, G.gt_mul(G.pair(c.c1[i], tk.k1[i]), G.pair(c.c2[i], tk.k2[i])))
    if stats is not None:
        stats.pairings += 1 + 2 * len(J)
        stats.evaluations += 1
    return G.gt_div(c.c_prime, G.gt_div(num, den))


def hve_match(pk: HvePublicKey, c: HveCiphertext, tk: HveToken, stats: MatchStats | None = None) -> bool:
    return hve_query(pk, c, tk, stats) == pk.sentinel


def encrypt_object(pk: HvePublicKey, object_id: str, loc: GridLocation, params: DomainParams, rng=None):
    """One ciphertext per tree level from ``h_max`` down to the leaves."""
    rng = as_drbg(rng)
    values = hve_level_values(loc, params)
    if values and max(v.value for v in values) >= pk.attribute_bound:
        raise HveError("attribute bound of the key is too small for this grid")
    return ObjectCipherBundle(
        object_id, [hve_encrypt(pk, v.value, level=v.level, rng=rng) for v in values]
    )


def query_token(sk: HveSecretKey, r: SpatialRange, params: DomainParams, rng=None) -> HveToken:
    q = hve_query_value(r, params)
    return hve_token(sk, q.value, level=q.level, rng=rng)


def single_level_match(pk, bundle: ObjectCipherBundle, tk: HveToken, stats=None) -> bool:
    c = bundle.at_level(tk.level)
    if c is None:
        log.warning("bundle %s has no ciphertext at level %d", bundle.object_id, tk.level)
        return False
    return hve_match(pk, c, tk, stats)


def full_scan_match(pk, bundle: ObjectCipherBundle, tk: HveToken, stats=None) -> bool:
    """Test the token against every level of the bundle (no level hint)."""
    hits = [hve_match(pk, c, tk, stats) for c in bundle.ciphertexts]
    return any(hits)


def _scan_slice(pk, bundles, tk, single_level):
    stats = MatchStats()
    match = single_level_match if single_level else full_scan_match
    ids = [b.object_id for b in bundles if match(pk, b, tk, stats)]
    return ids, stats


# Worker processes are forked after this is set, so they inherit the flat
# file instead of receiving a pickled copy of every bundle.
_SCAN_STATE: tuple | None = None


def _scan_range(bounds):
    pk, bundles, tk, single_level = _SCAN_STATE
    lo, hi = bounds
    return _scan_slice(pk, bundles[lo:hi], tk, single_level)


def partition(items: Sequence, parts: int) -> list[Sequence]:
    """Static contiguous partition into ``parts`` near-equal slices."""
    n = len(items)
    bounds = [n * k // parts for k in range(parts + 1)]
    return [items[bounds[k] : bounds[k + 1]] for k in range(parts)]


def linear_scan(
    pk: HvePublicKey,
    bundles: Sequence[ObjectCipherBundle],
    tk: HveToken,
    workers: int = 1,
    stats: MatchStats | None = None,
    single_level: bool = True,
) -> set[str]:
    """Match ``tk`` against every bundle of the flat file, optionally across processes."""
    global _SCAN_STATE
    if workers < 1:
        raise HveError("workers must be >= 1")
    if not bundles:
        return set()
    if workers == 1:
        results = [_scan_slice(pk, bundles, tk, single_level)]
    else:
        n = len(bundles)
        cuts = [n * k // workers for k in range(workers + 1)]
        _SCAN_STATE = (pk, bundles, tk, single_level)
        try:
            ctx = mp.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                results = list(ex.map(_scan_range, zip(cuts, cuts[1:])))
        finally:
            _SCAN_STATE = None
    found = set()
    for ids, s in results:
        found.update(ids)
        if stats is not None:
            stats.add(s)
    return found


# --- wire formats ---------------------------------------------------------

TOKEN_MAGIC = b"HVT1"
FLAT_MAGIC = b"HVEF"
FLAT_VERSION = 1


def _scalar_len(G: BilinearGroup) -> int:
    return (G.n.bit_length() + 7) // 8


def token_to_bytes(G: BilinearGroup, tk: HveToken) -> bytes:
    sl = _scalar_len(G)
    out = [TOKEN_MAGIC, tk.group_id, struct.pack(">HB", tk.level, len(tk.pattern))]
    for x in tk.pattern:
        if x is WILDCARD:
            out.append(b"\x00" + b"\x00" * sl)
        else:
            out.append(b"\x01" + x.to_bytes(sl, "big"))
    out.append(G.to_bytes(tk.k0))
    for i in tk.positions:
        out += [G.to_bytes(tk.k1[i]), G.to_bytes(tk.k2[i])]
    return b"".join(out)


def token_from_bytes(G: BilinearGroup, data: bytes) -> HveToken:
    if data[:4] != TOKEN_MAGIC:
        raise HveError("not a token")
    gid = data[4:20]
    if gid != G.fingerprint:
        raise GroupMismatchError("token was issued for another group")
    level, width = struct.unpack(">HB", data[20:23])
    pos = 23
    sl = _scalar_len(G)
    es = G.element_size
    pattern = []
    for _ in range(width):
        flag = data[pos]
        val = int.from_bytes(data[pos + 1 : pos + 1 + sl], "big")
        pattern.append(val if flag else WILDCARD)
        pos += 1 + sl

    def elem():
        nonlocal pos
        e = G.from_bytes(data[pos : pos + es])
        pos += es
        return e

    k0 = elem()
    k1, k2 = {}, {}
    for i, x in enumerate(pattern):
        if x is not WILDCARD:
            k1[i] = elem()
            k2[i] = elem()
    if pos != len(data):
        raise HveError("trailing bytes in token")
    return HveToken(tuple(pattern), level, k0, k1, k2, gid)


def _ciphertext_bytes(G: BilinearGroup, c: HveCiphertext) -> bytes:
    out = [struct.pack(">HB", c.level, len(c.c1)), G.gt_to_bytes(c.c_prime), G.to_bytes(c.c0)]
    for a, b in zip(c.c1, c.c2):
        out += [G.to_bytes(a), G.to_bytes(b)]
    return b"".join(out)


def bundle_to_bytes(G: BilinearGroup, bundle: ObjectCipherBundle) -> bytes:
    oid = bundle.object_id.encode()
    body = [struct.pack(">H", len(oid)), oid, struct.pack(">B", len(bundle.ciphertexts))]
    body += [_ciphertext_bytes(G, c) for c in bundle.ciphertexts]
    return b"".join(body)


def bundle_from_bytes(G: BilinearGroup, data: bytes) -> ObjectCipherBundle:
    (olen,) = struct.unpack_from(">H", data, 0)
    pos = 2
    oid = data[pos : pos + olen].decode()
    pos += olen
    count = data[pos]
    pos += 1
    es, ts = G.element_size, G.gt_size
    cts = []
    for _ in range(count):
        level, width = struct.unpack_from(">HB", data, pos)
        pos += 3
        cp = G.gt_from_bytes(data[pos : pos + ts])
        pos += ts
        c0 = G.from_bytes(data[pos : pos + es])
        pos += es
        c1, c2 = [], []
        for _ in range(width):
            c1.append(G.from_bytes(data[pos : pos + es]))
            c2.append(G.from_bytes(data[pos + es : pos + 2 * es]))
            pos += 2 * es
        cts.append(HveCiphertext(level, cp, c0, c1, c2, G.fingerprint))
    if pos != len(data):
        raise HveError("trailing bytes in bundle record")
    return ObjectCipherBundle(oid, cts)


def write_flat_file(G: BilinearGroup, bundles: Iterable[ObjectCipherBundle]) -> bytes:
    """Header (magic, version, group id) then length-prefixed bundle records."""
    out = [FLAT_MAGIC, struct.pack(">H", FLAT_VERSION), G.fingerprint]
    for b in bundles:
        rec = bundle_to_bytes(G, b)
        out += [struct.pack(">I", len(rec)), rec]
    return b"".join(out)


def append_flat_record(G: BilinearGroup, flat: bytes, bundle: ObjectCipherBundle) -> bytes:
    if not flat:
        flat = write_flat_file(G, [])
    rec = bundle_to_bytes(G, bundle)
    return flat + struct.pack(">I", len(rec)) + rec


def read_flat_file(G: BilinearGroup, data: bytes) -> list[ObjectCipherBundle]:
    if data[:4] != FLAT_MAGIC:
        raise HveError("not an HVE flat file")
    (version,) = struct.unpack_from(">H", data, 4)
    if version != FLAT_VERSION:
        raise HveError(f"unsupported flat file version {version}")
    if data[6:22] != G.fingerprint:
        raise GroupMismatchError("flat file belongs to another group")
    pos = 22
    out = []
    while pos < len(data):
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        out.append(bundle_from_bytes(G, data[pos : pos + n]))
        pos += n
    return out


__all__ = [
    "GroupError",
    "GroupMismatchError",
    "HveCiphertext",
    "HveError",
    "HvePublicKey",
    "HveSecretKey",
    "HveToken",
    "MatchStats",
    "ObjectCipherBundle",
    "WILDCARD",
    "append_flat_record",
    "bundle_from_bytes",
    "bundle_to_bytes",
    "encrypt_object",
    "full_scan_match",
    "hve_encrypt",
    "hve_match",
    "hve_query",
    "hve_setup",
    "hve_token",
    "linear_scan",
    "partition",
    "query_token",
    "read_flat_file",
    "single_level_match",
    "token_from_bytes",
    "token_to_bytes",
    "write_flat_file",
]
