"""Benchmark harness: check-in ingestion, query workloads, measurement runs and reports.

Every run checks its search results against a plaintext filter before it
records anything, and every column except the ``*_s`` timing columns is
deterministic under a fixed seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .commitment import random_messages, vc_commit, vc_keygen
from .encoding import (
    LA_BBOX,
    BBox,
    DomainParams,
    GridLocation,
    SpatialRange,
    align_to_node,
    decompose_range_query,
    object_keywords,
    snap_to_grid,
)
from .hve import (
    MatchStats,
    encrypt_object,
    group_setup,
    hve_setup,
    linear_scan,
    query_token,
    token_to_bytes,
)
from .ledger import GasSchedule, Ledger, Policy, Wallet
from .sse import SearchStats, encrypted_spatial_range_query, search_terms, sse_setup

DEFAULT_SIZES_M = ((400, 550), (800, 1100), (1600, 2200))
DEFAULT_SAMPLE_SIZES = (1000, 2000, 5000, 10000)


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class Checkin:
    user: str
    lat: float
    lon: float


@dataclass
class Dataset:
    checkins: list[Checkin] = field(default_factory=list)
    bbox: BBox = LA_BBOX

    def __len__(self) -> int:
        return len(self.checkins)

    def locations(self, params: DomainParams) -> dict[str, GridLocation]:
        """Object id -> grid cell; ids are positional so nested samples share them."""
        return {f"o{k:07d}": snap_to_grid(c.lat, c.lon, params) for k, c in enumerate(self.checkins)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "lat", "lon"])
            for c in self.checkins:
                w.writerow([c.user, repr(c.lat), repr(c.lon)])


def load_checkins(path, bbox: BBox = LA_BBOX) -> Dataset:
    """Read check-ins and keep those inside ``bbox``.

    Accepts a CSV with a header naming user/lat/lon columns, or the
    headerless tab-separated Gowalla dump (user, time, lat, lon, place).
    """
    text = Path(path).read_text()
    rows: list[Checkin] = []
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return Dataset([], bbox)
    if "\t" in lines[0]:
        for ln in lines:
            parts = ln.split("\t")
            if len(parts) < 4:
                continue
            rows.append(Checkin(parts[0], float(parts[2]), float(parts[3])))
    else:
        reader = csv.DictReader(io.StringIO("\n".join(lines)))
        cols = {c.lower().strip(): c for c in reader.fieldnames or []}
        ucol = cols.get("user") or cols.get("user_id") or cols.get("uid")
        lat = cols.get("lat") or cols.get("latitude")
        lon = cols.get("lon") or cols.get("lng") or cols.get("longitude")
        if lat is None or lon is None:
            raise BenchError("CSV needs lat and lon columns")
        for k, rec in enumerate(reader):
            rows.append(Checkin(rec[ucol] if ucol else str(k), float(rec[lat]), float(rec[lon])))
    return Dataset([c for c in rows if bbox.contains(c.lat, c.lon)], bbox)


def synthetic_checkins(n: int, bbox: BBox = LA_BBOX, seed: int = 0, clusters: int = 25) -> Dataset:
    """Clustered points inside ``bbox``, a stand-in when no check-in dump is at hand."""
    rng = random.Random(seed)
    centres = [(rng.uniform(bbox.min_lat, bbox.max_lat), rng.uniform(bbox.min_lon, bbox.max_lon)) for _ in range(clusters)]
    spread_lat = (bbox.max_lat - bbox.min_lat) / 20
    spread_lon = (bbox.max_lon - bbox.min_lon) / 20
    out = []
    while len(out) < n:
        if rng.random() < 0.2:
            lat, lon = rng.uniform(bbox.min_lat, bbox.max_lat), rng.uniform(bbox.min_lon, bbox.max_lon)
        else:
            clat, clon = rng.choice(centres)
            lat, lon = rng.gauss(clat, spread_lat), rng.gauss(clon, spread_lon)
        if bbox.contains(lat, lon):
            out.append(Checkin(f"u{rng.randrange(10**6)}", lat, lon))
    return Dataset(out, bbox)


def nested_samples(ds: Dataset, sizes: Sequence[int] = DEFAULT_SAMPLE_SIZES, seed: int = 0) -> dict[int, Dataset]:
    """Samples of increasing size, each a prefix of one shuffle, so smaller ones nest in larger."""
    if any(s > len(ds) for s in sizes):
        raise BenchError(f"dataset has {len(ds)} check-ins, fewer than requested {max(sizes)}")
    order = list(ds.checkins)
    random.Random(seed).shuffle(order)
    return {s: Dataset(order[:s], ds.bbox) for s in sorted(sizes)}


# --- workloads ---------------------------------------------------------------


@dataclass(frozen=True)
class WorkloadQuery:
    size: str  # e.g. "400x550"
    width_m: float
    height_m: float
    anchor: int  # index into the dataset
    lat: float
    lon: float


@dataclass
class QueryWorkload:
    queries: list[WorkloadQuery]
    bbox: BBox = LA_BBOX
    seed: int = 0

    def side_fractions(self) -> dict[str, tuple[float, float]]:
        """Each size's (width, height) as a fraction of the domain's side lengths."""
        w, h = self.bbox.side_lengths_m()
        return {q.size: (q.width_m / w, q.height_m / h) for q in self.queries}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "bbox": [self.bbox.min_lat, self.bbox.max_lat, self.bbox.min_lon, self.bbox.max_lon],
            "queries": [q.__dict__ for q in self.queries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryWorkload":
        return cls([WorkloadQuery(**q) for q in d["queries"]], BBox(*d["bbox"]), d.get("seed", 0))


def gen_workload(
    ds: Dataset, sizes: Iterable[tuple[float, float]] = DEFAULT_SIZES_M, count: int = 20, seed: int = 0
) -> QueryWorkload:
    """``count`` anchors per size, drawn from the dataset's check-ins."""
    if not ds.checkins:
        raise BenchError("cannot draw anchors from an empty dataset")
    rng = random.Random(seed)
    out = []
    for w, h in sizes:
        for _ in range(count):
            k = rng.randrange(len(ds))
            c = ds.checkins[k]
            out.append(WorkloadQuery(f"{w:g}x{h:g}", w, h, k, c.lat, c.lon))
    return QueryWorkload(out, ds.bbox, seed)


def cells_for(q: WorkloadQuery, params: DomainParams, bbox: BBox) -> tuple[int, int]:
    w, h = bbox.side_lengths_m()
    return max(1, math.ceil(q.width_m / (w / params.L))), max(1, math.ceil(q.height_m / (h / params.L)))


def arbitrary_range(q: WorkloadQuery, params: DomainParams, bbox: BBox) -> SpatialRange:
    """Range of the query's size centred on the anchor, shifted to stay inside the grid."""
    a = snap_to_grid(q.lat, q.lon, params)
    cw, ch = cells_for(q, params, bbox)

    def span(pos, n):
        n = min(n, params.L)
        lo = min(max(0, pos - n // 2), params.L - n)
        return lo, lo + n - 1

    x0, x1 = span(a.x, cw)
    y0, y1 = span(a.y, ch)
    return SpatialRange(x0, x1, y0, y1)


def restricted_range(q: WorkloadQuery, params: DomainParams, bbox: BBox, square: bool = False) -> SpatialRange:
    """Smallest node-aligned range around the anchor at least as large as the query."""
    a = snap_to_grid(q.lat, q.lon, params)
    cw, ch = cells_for(q, params, bbox)
    if square:
        cw = ch = max(cw, ch)
    x0, x1 = align_to_node(a.x, cw, params)
    y0, y1 = align_to_node(a.y, ch, params)
    return SpatialRange(x0, x1, y0, y1)


def plaintext_filter(locs: dict[str, GridLocation], r: SpatialRange) -> set[str]:
    return {oid for oid, loc in locs.items() if r.contains(loc)}


# --- reports -----------------------------------------------------------------


@dataclass
class Report:
    name: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **row):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise BenchError(f"unknown report columns {sorted(unknown)}")
        self.rows.append({c: row.get(c) for c in self.columns})

    @property
    def timing_columns(self) -> list[str]:
        return [c for c in self.columns if c.endswith("_s")]

    def deterministic_rows(self) -> list[dict]:
        skip = set(self.timing_columns)
        return [{k: v for k, v in r.items() if k not in skip} for r in self.rows]


def emit_report(report: Report, fmt: str = "csv", out_dir=".") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out / f"{report.name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=report.columns)
            w.writeheader()
            w.writerows(report.rows)
    elif fmt == "json":
        path = out / f"{report.name}.json"
        path.write_text(json.dumps({"name": report.name, "columns": report.columns, "rows": report.rows,
                                    "meta": report.meta}, indent=2, sort_keys=False))
    else:
        raise BenchError(f"unknown report format {fmt!r}")
    return path


def read_report(path) -> Report:
    path = Path(path)
    if path.suffix == ".json":
        d = json.loads(path.read_text())
        return Report(d["name"], d["columns"], d["rows"], d.get("meta", {}))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return Report(path.stem, list(reader.fieldnames or []), list(reader))


# --- SSE ---------------------------------------------------------------------

SSE_COLUMNS = [
    "logL", "h_max", "objects", "size", "placement", "queries", "skipped",
    "mean_conjunctive", "mean_db_w1", "mean_results", "index_bytes", "postings",
    "build_s", "mean_query_s",
]


def run_sse_bench(
    ds: Dataset,
    workload: QueryWorkload,
    logLs: Sequence[int] = (10,),
    h_maxes: Sequence[int] = (0,),
    seed: int = 0,
) -> Report:
    report = Report("sse", SSE_COLUMNS, meta={"seed": seed})
    for logL in logLs:
        for h in h_maxes:
            params = DomainParams(L=1 << logL, h_max=h, bbox=ds.bbox)
            locs = ds.locations(params)
            t0 = time.perf_counter()
            keys, edb = sse_setup({o: object_keywords(l, params) for o, l in locs.items()}, seed=f"sse-{seed}".encode())
            build = time.perf_counter() - t0
            size = edb.size_bytes
            by_size: dict[str, list[WorkloadQuery]] = {}
            for q in workload.queries:
                by_size.setdefault(q.size, []).append(q)
            for label, qs in by_size.items():
                for placement, make in (("arbitrary", arbitrary_range), ("restricted", restricted_range)):
                    conj = dbw1 = results = 0
                    elapsed = 0.0
                    ran = skipped = 0
                    for q in qs:
                        r = make(q, params, ds.bbox)
                        if max(r.width, r.height) > params.max_query_side:
                            skipped += 1
                            continue
                        stats = SearchStats()
                        t0 = time.perf_counter()
                        found = encrypted_spatial_range_query(edb, keys, r, params, stats)
                        elapsed += time.perf_counter() - t0
                        if found != plaintext_filter(locs, r):
                            raise BenchError(f"SSE result mismatch for {r}")
                        ran += 1
                        conj += stats.conjunctive_queries
                        dbw1 += stats.postings_scanned
                        results += len(found)
                    report.add(
                        logL=logL, h_max=h, objects=len(locs), size=label, placement=placement,
                        queries=ran, skipped=skipped,
                        mean_conjunctive=round(conj / ran, 4) if ran else None,
                        mean_db_w1=round(dbw1 / ran, 4) if ran else None,
                        mean_results=round(results / ran, 4) if ran else None,
                        index_bytes=size, postings=edb.posting_count,
                        build_s=round(build, 6), mean_query_s=round(elapsed / ran, 6) if ran else None,
                    )
    return report


def decomposition_counts(workload: QueryWorkload, params: DomainParams, bbox: BBox) -> list[tuple[int, int]]:
    """(arbitrary, restricted) conjunctive-term counts for every workload query."""
    out = []
    for q in workload.queries:
        a = search_terms(decompose_range_query(arbitrary_range(q, params, bbox), params))
        r = search_terms(decompose_range_query(restricted_range(q, params, bbox), params))
        out.append((len(a), len(r)))
    return out


# --- HVE ---------------------------------------------------------------------

HVE_COLUMNS = [
    "key_bits", "logL", "h_max", "objects", "workers", "bundle_len", "ciphertext_bytes",
    "token_bytes", "queries", "pairings_per_match", "full_scan_pairings_per_object",
    "matches", "encrypt_s", "token_s", "match_s", "scan_s", "speedup",
]


def run_hve_bench(
    ds: Dataset,
    workload: QueryWorkload,
    key_bits: int = 128,
    logL: int = 10,
    h_maxes: Sequence[int] = (0,),
    workers: Sequence[int] = (1, 2, 4),
    objects: int | None = None,
    backend: str = "exponent",
    seed: int = 0,
) -> Report:
    report = Report("hve", HVE_COLUMNS, meta={"seed": seed, "backend": backend})
    group = group_setup(key_bits, seed=f"group-{seed}".encode(), backend=backend)
    for h in h_maxes:
        params = DomainParams(L=1 << logL, h_max=h, bbox=ds.bbox)
        sub = Dataset(ds.checkins[:objects] if objects else ds.checkins, ds.bbox)
        locs = sub.locations(params)
        sk, pk = hve_setup(group, 1, attribute_bound=4 * params.L * params.L + 1, rng=f"hve-{seed}-{h}")
        t0 = time.perf_counter()
        bundles = [encrypt_object(pk, oid, loc, params, rng=f"{seed}:{oid}") for oid, loc in locs.items()]
        enc = (time.perf_counter() - t0) / max(1, len(bundles))
        # one ciphertext is C', C0 and a (C1, C2) pair; a bundle holds one per level
        ct_bytes = (group.gt_size + 3 * group.element_size) * (logL - h + 1)
        queries = []
        for q in workload.queries:
            r = restricted_range(q, params, ds.bbox, square=True)
            if r.width <= params.max_query_side:
                queries.append(r)
        token_times, token_sizes, pairings, matches = [], [], [], 0
        scan_times = {w: 0.0 for w in workers}
        match_time = 0.0
        full = MatchStats()
        for k, r in enumerate(queries):
            t0 = time.perf_counter()
            tk = query_token(sk, r, params, rng=f"tk-{seed}-{k}")
            token_times.append(time.perf_counter() - t0)
            token_sizes.append(len(token_to_bytes(group, tk)))
            expect = plaintext_filter(locs, r)
            for w in workers:
                stats = MatchStats()
                t0 = time.perf_counter()
                found = linear_scan(pk, bundles, tk, workers=w, stats=stats)
                dt = time.perf_counter() - t0
                scan_times[w] += dt
                if found != expect:
                    raise BenchError(f"HVE result mismatch for {r} with {w} workers")
                if w == workers[0]:
                    match_time += dt
                    pairings.append(stats.pairings / max(1, stats.evaluations))
                    matches += len(found)
            if k == 0 and bundles:
                linear_scan(pk, bundles[:20], tk, stats=full, single_level=False)
        nq = max(1, len(queries))
        base = scan_times[workers[0]]
        for w in workers:
            report.add(
                key_bits=key_bits, logL=logL, h_max=h, objects=len(bundles), workers=w,
                bundle_len=logL - h + 1, ciphertext_bytes=ct_bytes,
                token_bytes=max(token_sizes) if token_sizes else None, queries=len(queries),
                pairings_per_match=(sum(pairings) / len(pairings)) if pairings else None,
                full_scan_pairings_per_object=full.pairings / max(1, min(20, len(bundles))),
                matches=matches,
                encrypt_s=round(enc, 6),
                token_s=round(sum(token_times) / nq, 6),
                match_s=round(match_time / nq / max(1, len(bundles)), 9),
                scan_s=round(scan_times[w] / nq, 6),
                speedup=round(base / scan_times[w], 4) if scan_times[w] else None,
            )
    return report


# --- on-chain cost -----------------------------------------------------------

COST_COLUMNS = ["sequence", "operation", "gas", "usd"]


def run_cost_bench(schedule: GasSchedule | None = None, commitment_bits: int = 1024, seed: int = 0) -> Report:
    """Run the owner setup, TA/TC setup and one purchase on a fresh ledger and price each step."""
    ledger = Ledger(schedule or GasSchedule(), Policy())
    owner = Wallet.generate(f"cost-owner-{seed}")
    buyer = Wallet.generate(f"cost-buyer-{seed}")
    ta = Wallet.generate(f"cost-ta-{seed}")
    for w in (owner, buyer, ta):
        ledger.fund(w.address, 10**19)
    pp = vc_keygen(commitment_bits, 20, seed=f"cost-pp-{seed}")
    steps = [
        ("owner_setup", lambda: ledger.register_owner(owner.account)),
        ("owner_setup", lambda: ledger.set_commitment_params(owner.address, pp)),
        ("ta_setup", lambda: ledger.publish_index_info(ta.address, b"iid")),
    ]
    cc, _ = vc_commit(pp, random_messages(20, seed), seed)
    offer: list[int] = []
    steps += [
        ("purchase", lambda: ledger.submit_commitment(owner.address, cc, 20)[0]),
        ("purchase", lambda: _record(offer, ledger.make_offer(buyer.address, owner.address, "oid", 10**16))),
        ("purchase", lambda: _deliver_and_wait(ledger, owner, offer[0])),
        ("purchase", lambda: ledger.withdraw_payment(owner.address, offer[0])),
    ]
    report = Report("cost", COST_COLUMNS, meta={"schedule": ledger.schedule.to_dict()})
    totals: dict[str, int] = {}
    for seq, fn in steps:
        tx = fn()
        if tx is None:
            continue
        report.add(sequence=seq, operation=tx.op, gas=tx.gas, usd=round(ledger.usd_cost(tx), 6))
        totals[seq] = totals.get(seq, 0) + tx.gas
    for seq, gas in totals.items():
        report.add(sequence=seq, operation="TOTAL", gas=gas, usd=round(ledger.usd_cost(gas), 6))
    return report


def _record(box: list, result):
    tx, offer_id = result
    box.append(offer_id)
    return tx


def _deliver_and_wait(ledger: Ledger, owner: Wallet, offer_id: int):
    # key delivery is part of the contract flow but not a row of the purchase table
    ledger.deliver_key(owner.address, offer_id, b"envelope")
    ledger.advance(ledger.policy.dispute_window_blocks)
    return None


def cost_totals(report: Report) -> dict[str, tuple[int, float]]:
    return {r["sequence"]: (r["gas"], r["usd"]) for r in report.rows if r["operation"] == "TOTAL"}
