"""Conjunctive searchable symmetric encryption over object keyword sets.

The index has the usual two parts:

* a TSet mapping a pseudorandom label per keyword to that keyword's
  postings, each posting encrypting ``xind || id`` under a per-keyword key,
  where ``xind`` is a PRF of the object id;
* an XSet of cross tags ``PRF(PRF(K_X, w), xind)``, one per (keyword, object).

A conjunctive token carries the search tag of the first keyword plus one
cross trapdoor per remaining keyword.  Search walks the first keyword's
postings and tests each one against the XSet, so its work is exactly
``|DB(w1)|`` membership tests per extra keyword.  This is a basic
cross-tag (BXT-style) construction; whoever evaluates a token learns the
xind values of the first keyword's postings, and updates are not
forward private.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .encoding import ROOT_LABEL, DomainParams, SpatialRange, decompose_range_query
from .rand import Drbg

EDB_MAGIC = b"GSSE"
EDB_VERSION = 1
TOKEN_MAGIC = b"GSTK"
XTAG_LEN = 16
XIND_LEN = 16
ID_FIELD = 48  # 1 length byte + up to 47 bytes of object id


class SseError(ValueError):
    pass


class AuthenticationError(SseError):
    pass


def _digest(security_bits: int):
    return hashlib.sha256 if security_bits == 128 else hashlib.sha512


def _prf(key: bytes, data: bytes, security_bits: int = 128) -> bytes:
    return hmac.new(key, data, _digest(security_bits)).digest()


@dataclass(frozen=True)
class SseKeys:
    k_index: bytes
    k_doc: bytes
    security_bits: int = 128

    def _sub(self, label: bytes) -> bytes:
        return _prf(self.k_index, b"sub:" + label, self.security_bits)

    @cached_property
    def k_stag(self):
        return self._sub(b"stag")

    @cached_property
    def k_cross(self):
        return self._sub(b"xtrap")

    @cached_property
    def k_xind(self):
        return self._sub(b"xind")

    @cached_property
    def k_enc(self):
        return self._sub(b"enc")

    @cached_property
    def k_perm(self):
        return self._sub(b"perm")

    def __repr__(self):
        return f"SseKeys(security_bits={self.security_bits}, ...)"


@dataclass
class ConjunctiveToken:
    stag: bytes
    k_entry: bytes
    xtokens: list[bytes]

    def to_bytes(self) -> bytes:
        parts = [TOKEN_MAGIC, struct.pack(">BBB", len(self.stag), len(self.k_entry), len(self.xtokens))]
        parts += [self.stag, self.k_entry]
        for x in self.xtokens:
            parts += [struct.pack(">B", len(x)), x]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConjunctiveToken":
        if data[:4] != TOKEN_MAGIC:
            raise SseError("not an SSE token")
        ls, le, nx = struct.unpack_from(">BBB", data, 4)
        pos = 7
        stag = data[pos : pos + ls]
        pos += ls
        k_entry = data[pos : pos + le]
        pos += le
        xt = []
        for _ in range(nx):
            n = data[pos]
            xt.append(data[pos + 1 : pos + 1 + n])
            pos += 1 + n
        if pos != len(data):
            raise SseError("trailing bytes in token")
        return cls(stag, k_entry, xt)


@dataclass
class SearchStats:
    conjunctive_queries: int = 0
    postings_scanned: int = 0  # sum of |DB(w1)|
    xset_tests: int = 0


@dataclass
class EncryptedIndex:
    security_bits: int
    tset: dict[bytes, list[bytes]] = field(default_factory=dict)
    xset: set[bytes] = field(default_factory=set)
    members: set[bytes] = field(default_factory=set, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def posting_count(self) -> int:
        return sum(len(v) for v in self.tset.values())

    def to_bytes(self) -> bytes:
        out = [EDB_MAGIC, struct.pack(">HHI", EDB_VERSION, self.security_bits, len(self.tset))]
        for label in sorted(self.tset):
            postings = self.tset[label]
            out += [struct.pack(">BI", len(label), len(postings)), label]
            for p in postings:
                out += [struct.pack(">H", len(p)), p]
        for section in (self.xset, self.members):
            out.append(struct.pack(">IB", len(section), XTAG_LEN))
            out += sorted(section)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedIndex":
        if data[:4] != EDB_MAGIC:
            raise SseError("not an encrypted index")
        version, bits, ntags = struct.unpack_from(">HHI", data, 4)
        if version != EDB_VERSION:
            raise SseError(f"unsupported index version {version}")
        pos = 12
        edb = cls(security_bits=bits)
        for _ in range(ntags):
            llen, count = struct.unpack_from(">BI", data, pos)
            pos += 5
            label = data[pos : pos + llen]
            pos += llen
            postings = []
            for _ in range(count):
                (plen,) = struct.unpack_from(">H", data, pos)
                postings.append(data[pos + 2 : pos + 2 + plen])
                pos += 2 + plen
            edb.tset[label] = postings
        sections = []
        for _ in range(2):
            nx, xl = struct.unpack_from(">IB", data, pos)
            pos += 5
            sections.append({data[pos + k * xl : pos + (k + 1) * xl] for k in range(nx)})
            pos += nx * xl
        if pos != len(data):
            raise SseError("trailing bytes in index")
        edb.xset, edb.members = sections
        return edb

    @property
    def size_bytes(self) -> int:
        return len(self.to_bytes())


def generate_keys(security_bits: int = 128, seed: bytes | None = None) -> SseKeys:
    if security_bits not in (128, 256):
        raise SseError("security_bits must be 128 or 256")
    rng = Drbg(seed)
    n = security_bits // 8
    return SseKeys(rng.bytes(n), rng.bytes(n), security_bits)


def _stag(keys: SseKeys, w: str) -> bytes:
    return _prf(keys.k_stag, w.encode(), keys.security_bits)


def _label(stag: bytes) -> bytes:
    return hashlib.sha256(b"label" + stag).digest()


def _xind(keys: SseKeys, oid: str) -> bytes:
    return _prf(keys.k_xind, oid.encode(), keys.security_bits)[:XIND_LEN]


def _xtrap(keys: SseKeys, w: str) -> bytes:
    return _prf(keys.k_cross, w.encode(), keys.security_bits)


def _xtag(xtrap: bytes, xind: bytes) -> bytes:
    return hmac.new(xtrap, xind, hashlib.sha256).digest()[:XTAG_LEN]


def _entry_key(keys: SseKeys, w: str) -> bytes:
    return _prf(keys.k_enc, w.encode(), keys.security_bits)


NONCE_LEN = 16


def _stream(k_entry: bytes, nonce: bytes, n: int) -> bytes:
    return hashlib.shake_256(k_entry + nonce).digest(n)


def _posting(k_entry: bytes, xind: bytes, oid: str) -> bytes:
    """``nonce || Enc(xind || len || id)`` under the keyword's entry key."""
    raw = oid.encode()
    if len(raw) >= ID_FIELD:
        raise SseError(f"object id longer than {ID_FIELD - 1} bytes")
    nonce = hmac.new(k_entry, b"nonce" + raw, hashlib.sha256).digest()[:NONCE_LEN]
    plain = xind + bytes([len(raw)]) + raw.ljust(ID_FIELD - 1, b"\x00")
    return nonce + bytes(a ^ b for a, b in zip(plain, _stream(k_entry, nonce, len(plain))))


def _open_posting(k_entry: bytes, posting: bytes) -> tuple[bytes, str]:
    nonce, body = posting[:NONCE_LEN], posting[NONCE_LEN:]
    plain = bytes(a ^ b for a, b in zip(body, _stream(k_entry, nonce, len(body))))
    xind, rest = plain[:XIND_LEN], plain[XIND_LEN:]
    return xind, rest[1 : 1 + rest[0]].decode(errors="replace")


def _member_tag(keys: SseKeys, oid: str) -> bytes:
    return _prf(keys.k_index, b"member:" + oid.encode(), keys.security_bits)[:XTAG_LEN]


def sse_setup(
    ddb: Mapping[str, Iterable[str]], security_bits: int = 128, seed: bytes | None = None
) -> tuple[SseKeys, EncryptedIndex]:
    """Build keys and the encrypted index for ``ddb`` (object id -> keywords)."""
    if not ddb:
        raise SseError("document database is empty")
    keys = generate_keys(security_bits, seed)
    inverted: dict[str, list[str]] = {}
    for oid, words in ddb.items():
        for w in set(words):
            inverted.setdefault(w, []).append(oid)
    xinds = {oid: _xind(keys, oid) for oid in ddb}
    edb = EncryptedIndex(security_bits=security_bits)
    for w in sorted(inverted):
        ids = sorted(inverted[w])
        Drbg(_prf(keys.k_perm, w.encode(), security_bits)).shuffle(ids)
        k_entry = _entry_key(keys, w)
        xt = _xtrap(keys, w)
        edb.tset[_label(_stag(keys, w))] = [_posting(k_entry, xinds[oid], oid) for oid in ids]
        edb.xset.update(_xtag(xt, xinds[oid]) for oid in ids)
    edb.members = {_member_tag(keys, oid) for oid in ddb}
    return keys, edb


def sse_insert(edb: EncryptedIndex, keys: SseKeys, oid: str, keywords: Iterable[str]) -> EncryptedIndex:
    """Append one object to the index in place (single writer)."""
    xind = _xind(keys, oid)
    member = _member_tag(keys, oid)
    with edb._lock:
        if member in edb.members:
            raise SseError(f"object {oid!r} is already indexed")
        for w in sorted(set(keywords)):
            posting = _posting(_entry_key(keys, w), xind, oid)
            edb.tset.setdefault(_label(_stag(keys, w)), []).append(posting)
            edb.xset.add(_xtag(_xtrap(keys, w), xind))
        edb.members.add(member)
    return edb


def sse_token(keys: SseKeys, query: list[str] | tuple[str, ...]) -> ConjunctiveToken:
    """Token for the conjunction of ``query``; the first keyword drives the search."""
    if not query:
        raise SseError("empty query")
    w1, rest = query[0], query[1:]
    return ConjunctiveToken(
        stag=_stag(keys, w1),
        k_entry=_entry_key(keys, w1),
        xtokens=[_xtrap(keys, w) for w in rest],
    )


def sse_search(edb: EncryptedIndex, token: ConjunctiveToken, stats: SearchStats | None = None) -> set[str]:
    postings = edb.tset.get(_label(token.stag), ())
    found = set()
    tests = 0
    for p in postings:
        xind, oid = _open_posting(token.k_entry, p)
        ok = True
        for xt in token.xtokens:
            tests += 1
            if _xtag(xt, xind) not in edb.xset:
                ok = False
                break
        if ok:
            found.add(oid)
    if stats is not None:
        stats.conjunctive_queries += 1
        stats.postings_scanned += len(postings)
        stats.xset_tests += tests
    return found


def encrypted_spatial_range_query(
    edb: EncryptedIndex,
    keys: SseKeys,
    r: SpatialRange,
    params: DomainParams,
    stats: SearchStats | None = None,
) -> set[str]:
    matches: set[str] = set()
    for query in search_terms(decompose_range_query(r, params)):
        matches |= sse_search(edb, sse_token(keys, query), stats)
    return matches


def search_terms(pairs: list[tuple[str, str]]) -> list[tuple[str, ...]]:
    """Drop root keywords, which every object satisfies and none is indexed under.

    A term made only of roots (the whole domain) becomes the disjunction of
    the two level-1 x nodes, which together cover every object.
    """
    out = []
    for pair in pairs:
        kept = tuple(w for w in pair if not w.endswith(ROOT_LABEL))
        if kept:
            out.append(kept)
        else:
            out += [("x0",), ("x1",)]
    return out


def document_encrypt(key: bytes, payload: bytes, associated: bytes = b"") -> bytes:
    """AES-GCM; output is ``nonce || ciphertext || tag``."""
    nonce = os.urandom(12)
    return nonce + AESGCM(key).encrypt(nonce, payload, associated or None)


def document_decrypt(key: bytes, blob: bytes, associated: bytes = b"") -> bytes:
    try:
        return AESGCM(key).decrypt(blob[:12], blob[12:], associated or None)
    except InvalidTag:
        raise AuthenticationError("document authentication failed") from None
