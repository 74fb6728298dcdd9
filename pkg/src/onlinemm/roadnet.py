"""Link connection graph over directed road segments.

Segments are nodes; an edge ``i -> j`` exists when segment ``i`` ends
where segment ``j`` starts. Also provides nearest-segment candidate
retrieval through a uniform spatial hash, and the hop-count
connectivity degree used by the reward.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicateId, EmptyNetwork, UnknownSegment
from .geo import GeoPoint, GridSpec, LocalProjection

SNAP_TOLERANCE_M = 0.5
DEFAULT_CUTOFF = 20
DEFAULT_N_CANDIDATES = 10


@dataclass(frozen=True)
class RoadSegment:
    id: int
    polyline: tuple
    from_node: int | None = None
    to_node: int | None = None

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise ValueError(f"segment {self.id}: polyline needs at least two points")
        object.__setattr__(self, "polyline", tuple(self.polyline))

    @property
    def start(self) -> GeoPoint:
        return self.polyline[0]

    @property
    def end(self) -> GeoPoint:
        return self.polyline[-1]


@dataclass(frozen=True)
class Candidate:
    seg_id: int
    distance: float


def _segment_distances(px, py, ax, ay, bx, by):
    """Planar distance from (px, py) to each sub-segment a->b (elementwise)."""
    dx, dy = bx - ax, by - ay
    length2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - ax) * dx + (py - ay) * dy) / length2
    t = np.where(length2 > 0, np.clip(t, 0.0, 1.0), 0.0)
    cx = ax + t * dx - px
    cy = ay + t * dy - py
    return np.sqrt(cx * cx + cy * cy)


def point_segment_distance_m(p: GeoPoint, seg: RoadSegment, projection: LocalProjection | None = None) -> float:
    """Distance from ``p`` to the nearest point of the segment polyline."""
    proj = projection or LocalProjection(p.lat, p.lon)
    px, py = proj.point_xy(p)
    xs, ys = proj.to_xy([q.lat for q in seg.polyline], [q.lon for q in seg.polyline])
    return float(np.min(_segment_distances(px, py, xs[:-1], ys[:-1], xs[1:], ys[1:])))


class LinkConnectionGraph:
    """Immutable directed graph of road segments with a spatial index."""

    def __init__(self, segments, out_edges, projection: LocalProjection, bucket_m: float = 100.0):
        self.segments = tuple(segments)
        self.out_edges = tuple(tuple(sorted(e)) for e in out_edges)
        in_edges = [[] for _ in self.segments]
        for i, succ in enumerate(self.out_edges):
            for j in succ:
                in_edges[j].append(i)
        self.in_edges = tuple(tuple(sorted(e)) for e in in_edges)
        self.projection = projection
        self._build_geometry()
        self._build_index(bucket_m)
        self._hops_cache: dict = {}

    def __len__(self):
        return len(self.segments)

    @property
    def n_edges(self) -> int:
        return sum(len(e) for e in self.out_edges)

    def _build_geometry(self):
        ax, ay, bx, by, owner = [], [], [], [], []
        lengths = np.zeros(len(self.segments))
        for seg in self.segments:
            xs, ys = self.projection.to_xy([q.lat for q in seg.polyline], [q.lon for q in seg.polyline])
            ax.append(xs[:-1])
            ay.append(ys[:-1])
            bx.append(xs[1:])
            by.append(ys[1:])
            owner.append(np.full(len(xs) - 1, seg.id))
            lengths[seg.id] = float(np.sum(np.hypot(np.diff(xs), np.diff(ys))))
        self._ax, self._ay = np.concatenate(ax), np.concatenate(ay)
        self._bx, self._by = np.concatenate(bx), np.concatenate(by)
        self._owner = np.concatenate(owner)
        self.lengths = lengths
        order = np.argsort(self._owner, kind="stable")
        self._sub_start = np.searchsorted(self._owner[order], np.arange(len(self.segments)))
        self._sub_order = order

    def _build_index(self, bucket_m):
        self.bucket_m = float(bucket_m)
        xs = np.concatenate([self._ax, self._bx])
        ys = np.concatenate([self._ay, self._by])
        self._x0, self._y0 = float(xs.min()), float(ys.min())
        self._nbx = int((xs.max() - self._x0) // bucket_m) + 1
        self._nby = int((ys.max() - self._y0) // bucket_m) + 1
        buckets: dict = {}
        for k in range(len(self._owner)):
            lo_x = int((min(self._ax[k], self._bx[k]) - self._x0) // bucket_m)
            hi_x = int((max(self._ax[k], self._bx[k]) - self._x0) // bucket_m)
            lo_y = int((min(self._ay[k], self._by[k]) - self._y0) // bucket_m)
            hi_y = int((max(self._ay[k], self._by[k]) - self._y0) // bucket_m)
            for i in range(lo_x, hi_x + 1):
                for j in range(lo_y, hi_y + 1):
                    buckets.setdefault((i, j), set()).add(k)
        self._buckets = {key: np.array(sorted(v), dtype=np.int64) for key, v in buckets.items()}

    # -- geometry queries

    def distances_xy(self, px: float, py: float, sub_idx=None):
        """Per-segment distances from a projected point over the given sub-segments."""
        if sub_idx is None:
            d = _segment_distances(px, py, self._ax, self._ay, self._bx, self._by)
            owner = self._owner
        else:
            d = _segment_distances(px, py, self._ax[sub_idx], self._ay[sub_idx], self._bx[sub_idx], self._by[sub_idx])
            owner = self._owner[sub_idx]
        out = np.full(len(self.segments), np.inf)
        np.minimum.at(out, owner, d)
        return out

    def offset_xy(self, px: float, py: float, seg_id: int) -> float:
        """Distance along the segment from its start to the point nearest (px, py)."""
        self.segment(seg_id)
        lo = self._sub_start[seg_id]
        hi = self._sub_start[seg_id + 1] if seg_id + 1 < len(self.segments) else len(self._owner)
        sub = self._sub_order[lo:hi]
        ax, ay, bx, by = self._ax[sub], self._ay[sub], self._bx[sub], self._by[sub]
        d = _segment_distances(px, py, ax, ay, bx, by)
        k = int(np.argmin(d))
        dx, dy = bx[k] - ax[k], by[k] - ay[k]
        length = float(np.hypot(dx, dy))
        t = 0.0 if length == 0 else min(1.0, max(0.0, ((px - ax[k]) * dx + (py - ay[k]) * dy) / length**2))
        return float(np.sum(np.hypot(bx[:k] - ax[:k], by[:k] - ay[:k]))) + t * length

    def distance_m(self, p: GeoPoint, seg_id: int) -> float:
        return point_segment_distance_m(p, self.segment(seg_id), self.projection)

    def segment(self, seg_id: int) -> RoadSegment:
        if not 0 <= seg_id < len(self.segments):
            raise UnknownSegment(seg_id)
        return self.segments[seg_id]

    def candidates_xy(self, px: float, py: float, n_c: int = DEFAULT_N_CANDIDATES):
        n_c = min(n_c, len(self.segments))
        bxi = int(math.floor((px - self._x0) / self.bucket_m))
        byi = int(math.floor((py - self._y0) / self.bucket_m))
        # rings needed to cover the whole index from this bucket
        max_ring = max(abs(bxi), abs(byi), abs(self._nbx - 1 - bxi), abs(self._nby - 1 - byi))
        seen = set()
        r = 0
        while True:
            for i in range(bxi - r, bxi + r + 1):
                for j in range(byi - r, byi + r + 1):
                    if max(abs(i - bxi), abs(j - byi)) != r:
                        continue
                    sub = self._buckets.get((i, j))
                    if sub is not None:
                        seen.update(sub.tolist())
            if seen:
                d = self.distances_xy(px, py, np.fromiter(sorted(seen), dtype=np.int64))
                ids = np.flatnonzero(np.isfinite(d))
                if len(ids) >= n_c:
                    order = np.lexsort((ids, d[ids]))
                    kth = d[ids[order[n_c - 1]]]
                    # unseen segments are at least r buckets away
                    if kth < r * self.bucket_m or len(ids) == len(self.segments) or r >= max_ring:
                        top = ids[order[:n_c]]
                        return [Candidate(int(s), float(d[s])) for s in top]
            if r >= max_ring:
                d = self.distances_xy(px, py)
                order = np.lexsort((np.arange(len(d)), d))[:n_c]
                return [Candidate(int(s), float(d[s])) for s in order]
            r += 1

    # -- connectivity

    def hops_from(self, u: int, cutoff: int = DEFAULT_CUTOFF) -> dict:
        """BFS hop counts from ``u`` along directed edges, up to ``cutoff``."""
        key = (u, cutoff)
        hit = self._hops_cache.get(key)
        if hit is not None:
            return hit
        self.segment(u)
        dist = {u: 0}
        frontier = deque([u])
        while frontier:
            x = frontier.popleft()
            if dist[x] >= cutoff:
                continue
            for y in self.out_edges[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    frontier.append(y)
        if len(self._hops_cache) > 50_000:
            self._hops_cache.clear()
        self._hops_cache[key] = dist
        return dist


def build_link_graph(segments, snap_tol: float = SNAP_TOLERANCE_M, bucket_m: float = 100.0) -> LinkConnectionGraph:
    """Derive adjacency from node ids when every segment has them, else from geometry."""
    segments = list(segments)
    if not segments:
        raise EmptyNetwork("road network has no segments")
    ids = [s.id for s in segments]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateId(f"duplicate segment ids: {dup[:5]}")
    if sorted(ids) != list(range(len(ids))):
        raise ValueError("segment ids must be dense in [0, n)")
    segments.sort(key=lambda s: s.id)
    n = len(segments)
    lat0 = min(q.lat for s in segments for q in s.polyline)
    lon0 = min(q.lon for s in segments for q in s.polyline)
    proj = LocalProjection(lat0, lon0)

    out = [set() for _ in range(n)]
    if all(s.from_node is not None and s.to_node is not None for s in segments):
        by_start: dict = {}
        for s in segments:
            by_start.setdefault(s.from_node, []).append(s.id)
        touching: dict = {}
        for s in segments:
            touching.setdefault(s.from_node, set()).add(s.id)
            touching.setdefault(s.to_node, set()).add(s.id)
        for s in segments:
            for j in by_start.get(s.to_node, ()):
                if j == s.id and len(touching[s.to_node]) < 2:
                    continue
                out[s.id].add(j)
    else:
        sx, sy = proj.to_xy([s.start.lat for s in segments], [s.start.lon for s in segments])
        ex, ey = proj.to_xy([s.end.lat for s in segments], [s.end.lon for s in segments])
        starts = cKDTree(np.column_stack([sx, sy]))
        ends = cKDTree(np.column_stack([ex, ey]))
        for i in range(n):
            for j in starts.query_ball_point([ex[i], ey[i]], snap_tol):
                if j == i:
                    # a closed loop only links to itself when another segment meets the point
                    others = set(starts.query_ball_point([ex[i], ey[i]], snap_tol))
                    others |= set(ends.query_ball_point([ex[i], ey[i]], snap_tol))
                    if len(others - {i}) == 0:
                        continue
                out[i].add(j)
    return LinkConnectionGraph(segments, out, proj, bucket_m)


def candidates(p: GeoPoint, n_c: int, graph: LinkConnectionGraph) -> list:
    """The ``n_c`` nearest segments to ``p``, nearest first, ties by lower id."""
    if n_c < 1:
        raise ValueError("n_c must be at least 1")
    px, py = graph.projection.point_xy(p)
    return graph.candidates_xy(px, py, n_c)


def connectivity_delta(u: int, v: int, graph: LinkConnectionGraph, cutoff: int = DEFAULT_CUTOFF):
    """Hop count from ``u`` to ``v`` clamped to at least 1; ``None`` if unreachable within ``cutoff``."""
    graph.segment(u)
    graph.segment(v)
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    if u == v:
        return 1
    hops = graph.hops_from(u, cutoff).get(v)
    return None if hops is None else max(1, hops)


def segment_features(graph: LinkConnectionGraph, spec: GridSpec) -> np.ndarray:
    """(n_R, 8) features: start/end cell row/col and start/end lat/lon, min-max scaled."""
    starts = [s.start for s in graph.segments]
    ends = [s.end for s in graph.segments]
    slat = np.array([p.lat for p in starts])
    slon = np.array([p.lon for p in starts])
    elat = np.array([p.lat for p in ends])
    elon = np.array([p.lon for p in ends])
    sr, sc = spec.cells_of(slat, slon)
    er, ec = spec.cells_of(elat, elon)
    raw = np.column_stack([sr, sc, er, ec, slat, slon, elat, elon]).astype(float)
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (raw - lo) / safe, 0.0)


# -- file IO


def _parse_linestring(wkt: str):
    import shapely.wkt

    geom = shapely.wkt.loads(wkt)
    return [GeoPoint(lat=float(y), lon=float(x)) for x, y in geom.coords]


def read_road_csv(path) -> list:
    """Read ``seg_id,from_node,to_node,wkt`` rows (node ids may be blank)."""
    from .errors import ParseError

    segments = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"seg_id", "wkt"} - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"road file missing columns {sorted(missing)}", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                fn = row.get("from_node") or None
                tn = row.get("to_node") or None
                segments.append(
                    RoadSegment(
                        int(row["seg_id"]),
                        tuple(_parse_linestring(row["wkt"])),
                        int(fn) if fn is not None else None,
                        int(tn) if tn is not None else None,
                    )
                )
            except Exception as exc:  # noqa: BLE001 - reported with the line number
                raise ParseError(str(exc), lineno) from exc
    return segments


def write_road_csv(path, segments):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seg_id", "from_node", "to_node", "wkt"])
        for s in segments:
            coords = ", ".join(f"{q.lon!r} {q.lat!r}" for q in s.polyline)
            w.writerow([s.id, "" if s.from_node is None else s.from_node, "" if s.to_node is None else s.to_node,
                        f"LINESTRING ({coords})"])
