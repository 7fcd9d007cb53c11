import os
import threading

import pytest
from hypothesis import given, settings, strategies as st

from geomarket.store import BulkStore, IntegrityError, NotFound, StoreError, content_hash


@pytest.fixture(params=["memory", "disk"])
def store(request, tmp_path):
    return BulkStore(tmp_path / "dht" if request.param == "disk" else None)


def test_roundtrip_small_and_large(store):
    assert store.put(b"k1", b"x") == content_hash(b"x")
    assert store.get(b"k1") == b"x"
    big = os.urandom(10 << 20)
    store.put("big", big)
    assert store.get("big") == big


def test_absent_and_empty_key(store):
    with pytest.raises(NotFound):
        store.get(b"nope")
    with pytest.raises(StoreError):
        store.put(b"", b"x")


def test_hash_stable_on_reput(store):
    h1 = store.put(b"k", b"same bytes")
    h2 = store.put(b"k", b"same bytes")
    assert h1 == h2 == store.stat(b"k").digest
    store.put(b"k", b"new")
    assert store.get(b"k") == b"new"


def test_corruption_detected(store):
    h = store.put(b"k", b"payload")
    store.corrupt_blob(h, b"tampered")
    with pytest.raises(IntegrityError):
        store.get(b"k")
    store.delete_blob(h)
    with pytest.raises(IntegrityError):
        store.get(b"k")


@pytest.mark.parametrize("size,chunk", [(0, 7), (1, 7), (7, 7), (8, 7), (1000, 64), (100_000, 4096)])
def test_chunked(store, size, chunk):
    data = os.urandom(size)
    store.put(b"whole", data)
    store.put_chunked(b"split", data, chunk)
    assert store.get_chunked(b"split") == store.get(b"whole") == data
    assert store.chunk_count(b"split") == -(-size // chunk)


def test_missing_chunk(store):
    store.put_chunked(b"idx", os.urandom(100), 10)
    store.delete_blob(store.stat(b"idx#chunk:3").digest)
    with pytest.raises(IntegrityError):
        store.get_chunked(b"idx")


def test_replaced_chunk(store):
    store.put_chunked(b"idx", os.urandom(100), 10)
    store.put(b"idx#chunk:2", os.urandom(10))
    with pytest.raises(IntegrityError):
        store.get_chunked(b"idx")


def test_bad_chunk_size(store):
    with pytest.raises(StoreError):
        store.put_chunked(b"k", b"x", 0)


def test_directory_persists(tmp_path):
    a = BulkStore(tmp_path / "d")
    a.put(b"k", b"persisted")
    a.put_chunked(b"c", b"0123456789", 3)
    b = BulkStore(tmp_path / "d")
    assert b.get(b"k") == b"persisted"
    assert b.get_chunked(b"c") == b"0123456789"
    names = {p.name for p in (tmp_path / "d").iterdir()}
    assert content_hash(b"persisted") in names


def test_concurrent_writers():
    store = BulkStore()
    errors = []

    def worker(n):
        try:
            for i in range(200):
                key = f"w{n}-{i % 10}".encode()
                store.put(key, key * (i + 1))
                assert store.get(key).startswith(key)
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(store) == 40


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=2000), st.integers(1, 300))
def test_get_put_identity(data, chunk):
    store = BulkStore()
    store.put(b"k", data)
    store.put_chunked(b"c", data, chunk)
    assert store.get(b"k") == data == store.get_chunked(b"c")
