"""Content-hashed key-value store standing in for a DHT bulk-storage layer.

Values live in memory, optionally mirrored to a directory with one
hash-named file per blob.  Each key carries the sha256 of its value and
every read re-hashes, so corruption is always reported.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

DEFAULT_CHUNK = 1 << 20


class StoreError(Exception):
    pass


class NotFound(StoreError, KeyError):
    pass


class IntegrityError(StoreError):
    pass


@dataclass(frozen=True)
class StoredValue:
    digest: str
    size: int


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _key_bytes(key: bytes | str) -> bytes:
    if isinstance(key, str):
        key = key.encode()
    if not key:
        raise StoreError("store keys must be non-empty")
    return bytes(key)


def _chunk_key(key: bytes, n: int) -> bytes:
    return key + b"#chunk:" + str(n).encode()


def _manifest_key(key: bytes) -> bytes:
    return key + b"#manifest"


class BulkStore:
    def __init__(self, directory: str | Path | None = None):
        self._index: dict[bytes, StoredValue] = {}
        self._blobs: dict[str, bytes] = {}
        self._locks: dict[bytes, threading.Lock] = defaultdict(threading.Lock)
        self._meta_lock = threading.Lock()
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._load_directory()

    # --- persistence ---------------------------------------------------------

    def _index_path(self) -> Path:
        return self.directory / "index.json"

    def _load_directory(self):
        p = self._index_path()
        if p.exists():
            raw = json.loads(p.read_text())
            for hexkey, (digest, size) in raw.items():
                self._index[bytes.fromhex(hexkey)] = StoredValue(digest, size)

    def _save_index(self):
        raw = {k.hex(): [v.digest, v.size] for k, v in self._index.items()}
        tmp = self._index_path().with_suffix(".tmp")
        tmp.write_text(json.dumps(raw, sort_keys=True))
        tmp.replace(self._index_path())

    def _write_blob(self, digest: str, data: bytes):
        if self.directory:
            path = self.directory / digest
            if not path.exists():
                tmp = path.with_suffix(".tmp")
                tmp.write_bytes(data)
                tmp.replace(path)
        else:
            self._blobs[digest] = data

    def _read_blob(self, digest: str) -> bytes | None:
        if self.directory:
            path = self.directory / digest
            return path.read_bytes() if path.exists() else None
        return self._blobs.get(digest)

    def _lock_for(self, key: bytes) -> threading.Lock:
        with self._meta_lock:
            return self._locks[key]

    # --- whole values --------------------------------------------------------

    def put(self, key: bytes | str, value: bytes) -> str:
        """Store ``value`` under ``key`` and return its content hash."""
        k = _key_bytes(key)
        data = bytes(value)
        digest = content_hash(data)
        with self._lock_for(k):
            self._write_blob(digest, data)
            with self._meta_lock:
                self._index[k] = StoredValue(digest, len(data))
                if self.directory:
                    self._save_index()
        return digest

    def get(self, key: bytes | str) -> bytes:
        k = _key_bytes(key)
        with self._lock_for(k):
            meta = self._index.get(k)
            if meta is None:
                raise NotFound(k)
            data = self._read_blob(meta.digest)
        if data is None:
            raise IntegrityError(f"blob {meta.digest} for key {k!r} is missing")
        if content_hash(data) != meta.digest:
            raise IntegrityError(f"content hash mismatch for key {k!r}")
        return data

    def stat(self, key: bytes | str) -> StoredValue:
        k = _key_bytes(key)
        meta = self._index.get(k)
        if meta is None:
            raise NotFound(k)
        return meta

    def __contains__(self, key) -> bool:
        return _key_bytes(key) in self._index

    def __len__(self) -> int:
        return len(self._index)

    def delete_blob(self, digest: str) -> None:
        """Drop the bytes behind a hash, leaving the key dangling (for fault injection)."""
        if self.directory:
            (self.directory / digest).unlink(missing_ok=True)
        else:
            self._blobs.pop(digest, None)

    def corrupt_blob(self, digest: str, data: bytes) -> None:
        if self.directory:
            (self.directory / digest).write_bytes(data)
        else:
            self._blobs[digest] = data

    # --- chunked values ------------------------------------------------------

    def put_chunked(self, key: bytes | str, value: bytes, chunk_size: int = DEFAULT_CHUNK) -> str:
        """Split ``value`` into ``ceil(size / chunk_size)`` chunks plus a manifest."""
        if chunk_size <= 0:
            raise StoreError("chunk_size must be positive")
        k = _key_bytes(key)
        data = bytes(value)
        count = math.ceil(len(data) / chunk_size)
        digests = [self.put(_chunk_key(k, n), data[n * chunk_size : (n + 1) * chunk_size]) for n in range(count)]
        manifest = {"size": len(data), "chunk_size": chunk_size, "digest": content_hash(data), "chunks": digests}
        self.put(_manifest_key(k), json.dumps(manifest).encode())
        return manifest["digest"]

    def chunk_count(self, key: bytes | str) -> int:
        return len(json.loads(self.get(_manifest_key(_key_bytes(key))))["chunks"])

    def get_chunked(self, key: bytes | str) -> bytes:
        k = _key_bytes(key)
        manifest = json.loads(self.get(_manifest_key(k)))
        parts = []
        for n, digest in enumerate(manifest["chunks"]):
            try:
                part = self.get(_chunk_key(k, n))
            except NotFound:
                raise IntegrityError(f"chunk {n} of {k!r} is missing") from None
            if content_hash(part) != digest:
                raise IntegrityError(f"chunk {n} of {k!r} was replaced")
            parts.append(part)
        data = b"".join(parts)
        if len(data) != manifest["size"] or content_hash(data) != manifest["digest"]:
            raise IntegrityError(f"reassembled value for {k!r} does not match its manifest")
        return data
