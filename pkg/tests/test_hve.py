import random

import pytest

from geomarket.encoding import DomainParams, GridLocation, SpatialRange, aligned_square_queries
from geomarket.hve import (
    GroupError,
    GroupMismatchError,
    HveError,
    MatchStats,
    WILDCARD,
    append_flat_record,
    encrypt_object,
    full_scan_match,
    group_setup,
    hve_encrypt,
    hve_match,
    hve_query,
    hve_setup,
    hve_token,
    linear_scan,
    query_token,
    read_flat_file,
    single_level_match,
    token_from_bytes,
    token_to_bytes,
    write_flat_file,
)
from geomarket.rand import Drbg


@pytest.fixture(scope="module")
def group():
    return group_setup(128, seed=b"hve-tests")


@pytest.fixture(scope="module")
def keys(group):
    return hve_setup(group, 1, attribute_bound=4 * 16 * 16 + 1, rng=b"keys")


class TestGroup:
    @pytest.mark.parametrize("backend,bits", [("exponent", 128), ("curve", 64)])
    def test_bilinearity(self, backend, bits):
        G = group_setup(bits, seed=b"g", backend=backend)
        g = G.generator
        e = G.pair(g, g)
        assert e != G.gt_one
        assert G.pair(G.pow(g, 1), G.pow(g, 1)) == e
        assert G.pair(G.pow(g, 2), G.pow(g, 3)) == G.gt_pow(e, 6)
        rng = Drbg(b"probe")
        probes = 100 if backend == "exponent" else 10
        for _ in range(probes):
            a, b = G.random_g(rng), G.random_g(rng)
            u, v = rng.randbelow(G.n), rng.randbelow(G.n)
            assert G.pair(G.pow(a, u), G.pow(b, v)) == G.gt_pow(G.pair(a, b), u * v)

    @pytest.mark.parametrize("backend", ["exponent", "curve"])
    def test_subgroup_orthogonality_small_primes(self, backend):
        G = group_setup(24, seed=b"small", backend=backend)
        assert G.n == G.p * G.q
        rng = Drbg(b"o")
        for _ in range(5):
            a, b = G.random_gp(rng), G.random_gq(rng)
            assert G.pair(a, b) == G.gt_one
            assert G.pow(a, G.p) == G.identity
            assert G.pow(b, G.q) == G.identity
        assert G.pair(G.gen_p, G.gen_p) != G.gt_one

    def test_deterministic(self):
        assert group_setup(96, seed=b"d").public_params() == group_setup(96, seed=b"d").public_params()
        assert group_setup(96, seed=b"d").public_params() != group_setup(96, seed=b"e").public_params()

    def test_bad_params(self):
        with pytest.raises(GroupError):
            group_setup(8, seed=b"x")
        with pytest.raises(GroupError):
            group_setup(128, seed=b"x", backend="bogus")

    def test_serialization(self, group):
        rng = Drbg(1)
        a = group.random_g(rng)
        assert group.from_bytes(group.to_bytes(a)) == a
        t = group.pair(a, a)
        assert group.gt_from_bytes(group.gt_to_bytes(t)) == t


class TestScheme:
    def test_key_shapes(self, group, keys):
        sk, pk = keys
        assert pk.element_count == 2 + 3 * 1 + 1
        assert len(pk.U) == len(pk.H) == len(pk.W) == 1
        assert pk.A == group.gt_pow(group.pair(sk.g, sk.v), sk.a)

    def test_setups_differ(self, group):
        _, pk1 = hve_setup(group, rng=b"a")
        _, pk2 = hve_setup(group, rng=b"b")
        assert pk1.to_bytes() != pk2.to_bytes()

    def test_width_must_be_positive(self, group):
        with pytest.raises(HveError):
            hve_setup(group, 0)

    def test_roundtrip(self, keys):
        sk, pk = keys
        c = hve_encrypt(pk, 89, rng=1)
        assert hve_match(pk, c, hve_token(sk, 89, rng=2))
        assert not hve_match(pk, c, hve_token(sk, 88, rng=3))

    def test_fresh_randomness(self, keys):
        sk, pk = keys
        rng = Drbg(5)
        c1, c2 = hve_encrypt(pk, 7, rng=rng), hve_encrypt(pk, 7, rng=rng)
        assert c1.c0 != c2.c0 and c1.c_prime != c2.c_prime
        t1, t2 = hve_token(sk, 7, rng=rng), hve_token(sk, 7, rng=rng)
        assert t1.k0 != t2.k0

    def test_attribute_bound(self, keys):
        _, pk = keys
        with pytest.raises(HveError):
            hve_encrypt(pk, pk.attribute_bound)
        with pytest.raises(HveError):
            hve_encrypt(pk, -1)

    def test_random_scalars_match_iff_equal(self, keys):
        sk, pk = keys
        rng = random.Random(9)
        drbg = Drbg(9)
        for _ in range(100):
            a, b = rng.randrange(20), rng.randrange(20)
            c = hve_encrypt(pk, a, rng=drbg)
            assert hve_match(pk, c, hve_token(sk, b, rng=drbg)) == (a == b)

    def test_wildcard(self, keys):
        sk, pk = keys
        tk = hve_token(sk, WILDCARD)
        assert tk.positions == []
        assert tk.k0 == pk.group.pow(sk.g, sk.a)
        drbg = Drbg(10)
        stats = MatchStats()
        for _ in range(10):
            assert hve_match(pk, hve_encrypt(pk, drbg.randbelow(1000), rng=drbg), tk, stats)
        assert stats.pairings == 10

    def test_query_recovers_sentinel(self, keys):
        sk, pk = keys
        c = hve_encrypt(pk, 42, rng=11)
        assert hve_query(pk, c, hve_token(sk, 42, rng=12)) == pk.sentinel
        assert hve_query(pk, c, hve_token(sk, 43, rng=13)) != pk.sentinel

    def test_custom_message(self, keys):
        sk, pk = keys
        G = pk.group
        M = G.gt_pow(pk.A, 12345)
        c = hve_encrypt(pk, 3, message=M, rng=14)
        assert hve_query(pk, c, hve_token(sk, 3, rng=15)) == M

    def test_width_two(self, group):
        sk, pk = hve_setup(group, 2, rng=b"w2")
        c = hve_encrypt(pk, (5, 9), rng=1)
        assert hve_match(pk, c, hve_token(sk, (5, 9), rng=2))
        assert hve_match(pk, c, hve_token(sk, (5, WILDCARD), rng=3))
        assert not hve_match(pk, c, hve_token(sk, (5, 8), rng=4))
        stats = MatchStats()
        hve_match(pk, c, hve_token(sk, (5, 9), rng=5), stats)
        assert stats.pairings == 5

    def test_group_mismatch(self, keys):
        sk, pk = keys
        other = group_setup(128, seed=b"other")
        _, pk2 = hve_setup(other, rng=b"x")
        c = hve_encrypt(pk2, 1, rng=1)
        with pytest.raises(GroupMismatchError):
            hve_match(pk, c, hve_token(sk, 1))

    def test_curve_backend_roundtrip(self):
        G = group_setup(64, seed=b"curve", backend="curve")
        sk, pk = hve_setup(G, rng=b"k")
        p = DomainParams(L=8, h_max=1)
        bundle = encrypt_object(pk, "o", GridLocation(3, 4), p, rng=1)
        assert single_level_match(pk, bundle, query_token(sk, SpatialRange(2, 3, 4, 5), p, rng=2))
        assert not single_level_match(pk, bundle, query_token(sk, SpatialRange(0, 1, 4, 5), p, rng=3))


class TestSpatial:
    def test_bundle_shape(self, keys):
        _, pk = keys
        for h in range(5):
            p = DomainParams(L=16, h_max=h)
            b = encrypt_object(pk, "o", GridLocation(3, 9), p, rng=h)
            assert len(b.ciphertexts) == 4 - h + 1
            assert all(c.element_count == 4 for c in b.ciphertexts)

    def test_example_bundle(self, group):
        sk, pk = hve_setup(group, rng=b"p")
        p = DomainParams(L=8, h_max=1)
        b = encrypt_object(pk, "o", GridLocation(3, 4), p, rng=1)
        for level, value in [(1, 24), (2, 89), (3, 122)]:
            c = b.at_level(level)
            assert hve_match(pk, c, hve_token(sk, value, level, rng=2))
        assert single_level_match(pk, b, hve_token(sk, 89, 2, rng=3))
        assert not single_level_match(pk, b, hve_token(sk, 24, 2, rng=4))

    def test_reencryption_differs(self, keys):
        sk, pk = keys
        p = DomainParams(L=16)
        b1 = encrypt_object(pk, "o", GridLocation(1, 2), p, rng=1)
        b2 = encrypt_object(pk, "o", GridLocation(1, 2), p, rng=2)
        G = pk.group
        assert write_flat_file(G, [b1]) != write_flat_file(G, [b2])
        tk = query_token(sk, SpatialRange(0, 3, 0, 3), p)
        assert single_level_match(pk, b1, tk) and single_level_match(pk, b2, tk)

    def test_missing_level(self, keys, caplog):
        sk, pk = keys
        b = encrypt_object(pk, "o", GridLocation(1, 2), DomainParams(L=16, h_max=3), rng=1)
        assert not single_level_match(pk, b, hve_token(sk, 0, level=0))
        assert "no ciphertext at level 0" in caplog.text

    def test_exhaustive_l16_single_level_equals_full_scan(self, keys):
        sk, pk = keys
        p = DomainParams(L=16, h_max=2)
        drbg = Drbg(b"ex")
        bundles = {(x, y): encrypt_object(pk, f"{x},{y}", GridLocation(x, y), p, rng=drbg)
                   for x in range(16) for y in range(16)}
        for r in aligned_square_queries(p):
            tk = query_token(sk, r, p, rng=drbg)
            for (x, y), b in bundles.items():
                s1, s2 = MatchStats(), MatchStats()
                inside = r.contains(GridLocation(x, y))
                assert single_level_match(pk, b, tk, s1) == inside
                if (x + y) % 17 == 0:
                    assert full_scan_match(pk, b, tk, s2) == inside
                    assert s1.pairings == 3
                    assert s2.pairings == 3 * len(b.ciphertexts)

    def test_at_most_one_level_matches(self, keys):
        sk, pk = keys
        p = DomainParams(L=16)
        b = encrypt_object(pk, "o", GridLocation(5, 11), p, rng=3)
        for r in aligned_square_queries(DomainParams(L=16, h_max=2)):
            tk = query_token(sk, r, p)
            assert sum(hve_match(pk, c, tk) for c in b.ciphertexts) == int(r.contains(GridLocation(5, 11)))

    def test_false_positive_probe(self, keys):
        sk, pk = keys
        drbg = Drbg(b"fp")
        hits = 0
        for _ in range(1000):
            a = drbg.randbelow(pk.attribute_bound)
            b = (a + 1 + drbg.randbelow(pk.attribute_bound - 1)) % pk.attribute_bound
            hits += hve_match(pk, hve_encrypt(pk, a, rng=drbg), hve_token(sk, b, rng=drbg))
        assert hits == 0


class TestScanAndWire:
    def _file(self, pk, p, n, seed=0):
        rng = random.Random(seed)
        drbg = Drbg(seed)
        locs = {f"o{i}": GridLocation(rng.randrange(p.L), rng.randrange(p.L)) for i in range(n)}
        return locs, [encrypt_object(pk, oid, loc, p, rng=drbg) for oid, loc in locs.items()]

    def test_workers_agree(self, keys):
        sk, pk = keys
        p = DomainParams(L=16, h_max=1)
        locs, bundles = self._file(pk, p, 120)
        r = SpatialRange(0, 7, 8, 15)
        tk = query_token(sk, r, p)
        expect = {oid for oid, loc in locs.items() if r.contains(loc)}
        results = []
        for w in (1, 2, 4):
            stats = MatchStats()
            results.append(linear_scan(pk, bundles, tk, workers=w, stats=stats))
            assert stats.pairings == 3 * len(bundles)
        assert results[0] == results[1] == results[2] == expect

    def test_empty_file(self, keys):
        sk, pk = keys
        assert linear_scan(pk, [], hve_token(sk, 1), workers=2) == set()
        with pytest.raises(HveError):
            linear_scan(pk, [], hve_token(sk, 1), workers=0)

    def test_flat_file_roundtrip(self, keys):
        sk, pk = keys
        G = pk.group
        p = DomainParams(L=16)
        locs, bundles = self._file(pk, p, 20, seed=3)
        blob = write_flat_file(G, bundles)
        back = read_flat_file(G, blob)
        assert [b.object_id for b in back] == list(locs)
        tk = query_token(sk, SpatialRange(0, 15, 0, 15), p)
        assert linear_scan(pk, back, tk) == set(locs)
        incremental = b""
        for b in bundles:
            incremental = append_flat_record(G, incremental, b)
        assert incremental == blob
        with pytest.raises(GroupMismatchError):
            read_flat_file(group_setup(128, seed=b"zz"), blob)

    def test_token_wire(self, keys):
        sk, pk = keys
        G = pk.group
        tk = hve_token(sk, 89, level=2, rng=1)
        back = token_from_bytes(G, token_to_bytes(G, tk))
        assert back == tk
        wild = hve_token(sk, WILDCARD, level=0)
        assert token_from_bytes(G, token_to_bytes(G, wild)) == wild
        assert token_to_bytes(G, hve_token(sk, 89, 2, rng=2)) != token_to_bytes(G, tk)
