"""Grid, binary-tree and keyword encodings of locations and range queries.

Each axis of an ``L x L`` grid is a full binary tree over ``[0, L)``.  A node
is named by the bit path from the root (left = ``0``, right = ``1``); the
root has the empty path, rendered ``"∅"``.  Objects are described by the
nodes on the upward path from their leaf, queries by a best range cover, and
the HVE variant collapses a same-level (x, y) node pair into one scalar.

Every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

ROOT_LABEL = "∅"


class EncodingError(ValueError):
    """A location or range does not fit the domain parameters."""


class RangeSizeError(EncodingError):
    """Range side exceeds the ``L / 2**h_max`` query size limit."""


class AlignmentError(EncodingError):
    """Range side is not the span of exactly one tree node."""

    def __init__(self, axis: str, message: str):
        super().__init__(f"axis {axis}: {message}")
        self.axis = axis


@dataclass(frozen=True)
class BBox:
    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float

    def __post_init__(self):
        if not (self.min_lat < self.max_lat and self.min_lon < self.max_lon):
            raise EncodingError(f"degenerate bounding box {self}")

    def contains(self, lat: float, lon: float) -> bool:
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon

    def side_lengths_m(self) -> tuple[float, float]:
        """Equirectangular (width, height) in metres, measured at the centre latitude."""
        mid = math.radians((self.min_lat + self.max_lat) / 2)
        deg = 111_320.0
        return (
            (self.max_lon - self.min_lon) * deg * math.cos(mid),
            (self.max_lat - self.min_lat) * deg,
        )


# Los Angeles check-in area used for the Gowalla experiments.
LA_BBOX = BBox(min_lat=33.6996, max_lat=34.3423, min_lon=-118.6846, max_lon=-118.1444)


@dataclass(frozen=True)
class DomainParams:
    L: int
    h_max: int = 0
    bbox: BBox = LA_BBOX

    def __post_init__(self):
        if self.L < 2 or self.L & (self.L - 1):
            raise EncodingError(f"L must be a power of two >= 2, got {self.L}")
        if not 0 <= self.h_max <= self.logL:
            raise EncodingError(f"h_max must lie in [0, {self.logL}], got {self.h_max}")

    @property
    def logL(self) -> int:
        return self.L.bit_length() - 1

    @property
    def max_query_side(self) -> int:
        return self.L >> self.h_max

    @classmethod
    def from_dict(cls, d: dict) -> "DomainParams":
        bbox = BBox(**d["bbox"]) if "bbox" in d else LA_BBOX
        if "L" in d:
            L = int(d["L"])
        else:
            L = 1 << int(d["logL"])
        return cls(L=L, h_max=int(d.get("h_max", 0)), bbox=bbox)

    def to_dict(self) -> dict:
        b = self.bbox
        return {
            "L": self.L,
            "h_max": self.h_max,
            "bbox": {
                "min_lat": b.min_lat,
                "max_lat": b.max_lat,
                "min_lon": b.min_lon,
                "max_lon": b.max_lon,
            },
        }


@dataclass(frozen=True, order=True)
class GridLocation:
    x: int
    y: int

    def check(self, params: DomainParams) -> "GridLocation":
        if not (0 <= self.x < params.L and 0 <= self.y < params.L):
            raise EncodingError(f"{self} outside the {params.L}x{params.L} grid")
        return self


@dataclass(frozen=True)
class NodeId:
    path: str
    axis: str | None = None

    @property
    def level(self) -> int:
        return len(self.path)

    @property
    def label(self) -> str:
        return self.path or ROOT_LABEL

    @property
    def keyword(self) -> str:
        return (self.axis or "") + self.label

    def span(self, params: DomainParams) -> tuple[int, int]:
        """Inclusive leaf range ``[lo, hi]`` under this node."""
        width = params.L >> self.level
        lo = (int(self.path, 2) if self.path else 0) * width
        return lo, lo + width - 1

    def with_axis(self, axis: str) -> "NodeId":
        return NodeId(self.path, axis)

    def __str__(self):
        return self.keyword


@dataclass(frozen=True)
class SpatialRange:
    x_lo: int
    x_hi: int
    y_lo: int
    y_hi: int

    def check(self, params: DomainParams) -> "SpatialRange":
        for lo, hi in ((self.x_lo, self.x_hi), (self.y_lo, self.y_hi)):
            if not 0 <= lo <= hi < params.L:
                raise EncodingError(f"{self} is not a valid range for L={params.L}")
        return self

    def contains(self, loc: GridLocation) -> bool:
        return self.x_lo <= loc.x <= self.x_hi and self.y_lo <= loc.y <= self.y_hi

    @property
    def width(self) -> int:
        return self.x_hi - self.x_lo + 1

    @property
    def height(self) -> int:
        return self.y_hi - self.y_lo + 1


@dataclass(frozen=True)
class HveLevelValue:
    level: int
    value: int


RangeCover = list  # ordered list of NodeId, left to right


def snap_to_grid(lat: float, lon: float, params: DomainParams) -> GridLocation:
    """Map a coordinate inside ``params.bbox`` to its grid cell (longitude -> x, latitude -> y)."""
    b = params.bbox
    if not b.contains(lat, lon):
        raise EncodingError(f"({lat}, {lon}) lies outside the bounding box")
    fx = (lon - b.min_lon) / (b.max_lon - b.min_lon)
    fy = (lat - b.min_lat) / (b.max_lat - b.min_lat)
    x = min(int(math.floor(fx * params.L)), params.L - 1)
    y = min(int(math.floor(fy * params.L)), params.L - 1)
    return GridLocation(x, y)


def _check_pos(pos: int, params: DomainParams):
    if not 0 <= pos < params.L:
        raise EncodingError(f"position {pos} outside [0, {params.L})")


def covering_nodes_1d(pos: int, params: DomainParams) -> list[NodeId]:
    """Nodes on the path from leaf ``pos`` up to the root, leaf first."""
    _check_pos(pos, params)
    bits = format(pos, f"0{params.logL}b")
    return [NodeId(bits[:k]) for k in range(params.logL, -1, -1)]


def object_keywords(loc: GridLocation, params: DomainParams) -> set[str]:
    loc.check(params)
    words = set()
    for axis, pos in (("x", loc.x), ("y", loc.y)):
        for node in covering_nodes_1d(pos, params):
            # root is shared by every object; levels above h_max are never queried
            if node.level == 0 or node.level < params.h_max:
                continue
            words.add(axis + node.label)
    return words


def brc_cover_1d(lo: int, hi: int, params: DomainParams) -> RangeCover:
    """Best range cover: the fewest tree nodes whose leaves partition ``[lo, hi]``."""
    if not 0 <= lo <= hi < params.L:
        raise EncodingError(f"[{lo}, {hi}] is not a range in [0, {params.L})")
    if hi - lo + 1 > params.max_query_side:
        raise RangeSizeError(
            f"[{lo}, {hi}] spans {hi - lo + 1} cells, limit is {params.max_query_side}"
        )
    cover: list[NodeId] = []

    def visit(path: str, n_lo: int, n_hi: int):
        if n_hi < lo or n_lo > hi:
            return
        if lo <= n_lo and n_hi <= hi:
            cover.append(NodeId(path))
            return
        mid = (n_lo + n_hi) // 2
        visit(path + "0", n_lo, mid)
        visit(path + "1", mid + 1, n_hi)

    visit("", 0, params.L - 1)
    return cover


def _pair_key(pair: tuple[str, str], depth: dict[str, int]):
    return (-depth[pair[0]], pair)


def _order_pair(a: NodeId, b: NodeId) -> tuple[str, str]:
    # deeper node first: its posting list is the shorter one
    if (-a.level, a.keyword) <= (-b.level, b.keyword):
        return a.keyword, b.keyword
    return b.keyword, a.keyword


def decompose_range_query(r: SpatialRange, params: DomainParams) -> list[tuple[str, str]]:
    """Cross join of the x and y covers, one conjunctive keyword pair per term."""
    r.check(params)
    xs = [n.with_axis("x") for n in brc_cover_1d(r.x_lo, r.x_hi, params)]
    ys = [n.with_axis("y") for n in brc_cover_1d(r.y_lo, r.y_hi, params)]
    depth = {n.keyword: n.level for n in xs + ys}
    pairs = [_order_pair(nx, ny) for nx in xs for ny in ys]
    return sorted(pairs, key=lambda p: _pair_key(p, depth))


def _aligned_node(lo: int, hi: int, axis: str, params: DomainParams) -> NodeId:
    size = hi - lo + 1
    if size & (size - 1) or lo % size:
        raise AlignmentError(axis, f"[{lo}, {hi}] is not the span of a single tree node")
    level = params.logL - (size.bit_length() - 1)
    path = format(lo // size, f"0{level}b") if level else ""
    return NodeId(path, axis)


def aligned_query_keywords(r: SpatialRange, params: DomainParams) -> tuple[str, str]:
    r.check(params)
    nx = _aligned_node(r.x_lo, r.x_hi, "x", params)
    ny = _aligned_node(r.y_lo, r.y_hi, "y", params)
    for n in (nx, ny):
        if n.level < params.h_max:
            raise RangeSizeError(f"{n.keyword} lies above the h_max={params.h_max} cut")
    return _order_pair(nx, ny)


def preorder_id(node: NodeId, params: DomainParams) -> int:
    """0-based position of ``node`` in a pre-order walk of the 2L-1 node tree."""
    if node.level > params.logL:
        raise EncodingError(f"{node.keyword} is deeper than log L = {params.logL}")
    idx = 0
    for depth, bit in enumerate(node.path):
        if bit == "0":
            idx += 1
        else:
            # skip the whole left subtree rooted at depth+1
            idx += 1 + (1 << (params.logL - depth)) - 1
    return idx


def _pair_value(nx: NodeId, ny: NodeId, params: DomainParams) -> int:
    return preorder_id(nx, params) * 2 * params.L + preorder_id(ny, params)


def hve_level_values(loc: GridLocation, params: DomainParams) -> list[HveLevelValue]:
    loc.check(params)
    xs = covering_nodes_1d(loc.x, params)[::-1]  # root first
    ys = covering_nodes_1d(loc.y, params)[::-1]
    return [
        HveLevelValue(level, _pair_value(xs[level], ys[level], params))
        for level in range(params.h_max, params.logL + 1)
    ]


def hve_query_value(r: SpatialRange, params: DomainParams) -> HveLevelValue:
    r.check(params)
    if r.width != r.height:
        raise EncodingError(f"HVE queries must be square, got {r.width}x{r.height}")
    nx = _aligned_node(r.x_lo, r.x_hi, "x", params)
    ny = _aligned_node(r.y_lo, r.y_hi, "y", params)
    if nx.level < params.h_max:
        raise RangeSizeError(f"query level {nx.level} is above h_max={params.h_max}")
    return HveLevelValue(nx.level, _pair_value(nx, ny, params))


def aligned_square_queries(params: DomainParams) -> Iterable[SpatialRange]:
    """Every square, node-aligned query admissible under ``params``."""
    for level in range(params.h_max, params.logL + 1):
        side = params.L >> level
        for i in range(1 << level):
            for j in range(1 << level):
                yield SpatialRange(i * side, (i + 1) * side - 1, j * side, (j + 1) * side - 1)


def align_to_node(pos: int, side: int, params: DomainParams) -> tuple[int, int]:
    """Smallest node-aligned interval of at least ``side`` cells that contains ``pos``."""
    _check_pos(pos, params)
    width = 1
    while width < side:
        width <<= 1
    width = min(width, params.L)
    lo = (pos // width) * width
    return lo, lo + width - 1


def aligned_square_cover(r: SpatialRange, params: DomainParams) -> list[SpatialRange]:
    """Disjoint node-aligned squares, each admissible as an HVE query, whose union is ``r``.

    Quadtree descent from the ``h_max`` level: a square fully inside ``r``
    is kept, a square disjoint from ``r`` is dropped, anything else splits.
    """
    r.check(params)
    out: list[SpatialRange] = []

    def visit(x0: int, y0: int, side: int):
        x1, y1 = x0 + side - 1, y0 + side - 1
        if x1 < r.x_lo or x0 > r.x_hi or y1 < r.y_lo or y0 > r.y_hi:
            return
        if r.x_lo <= x0 and x1 <= r.x_hi and r.y_lo <= y0 and y1 <= r.y_hi:
            out.append(SpatialRange(x0, x1, y0, y1))
            return
        half = side // 2
        for dx in (0, half):
            for dy in (0, half):
                visit(x0 + dx, y0 + dy, half)

    side = params.max_query_side
    for x0 in range(0, params.L, side):
        for y0 in range(0, params.L, side):
            visit(x0, y0, side)
    return out
