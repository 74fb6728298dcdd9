"""Trajectory transition graph over grid cells and the road-to-grid mapping."""
from __future__ import annotations

import csv

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch
from .geo import GridCell, GridSpec


def trajectory_cells(traj, spec: GridSpec) -> np.ndarray:
    """Flat cell indices (row * W + col) of a trajectory's points."""
    points = getattr(traj, "points", traj)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    rows, cols = spec.cells_of([p.lat for p in points], [p.lon for p in points])
    return rows * spec.W + cols


class TrajectoryTransitionGraph:
    """Directed graph of visited cells; edge weights count cell changes."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.cells: list = []  # flat cell index per node
        self.node_of: dict = {}
        self.weights: dict = {}  # (src node, dst node) -> count
        self.point_count = 0

    def __len__(self):
        return len(self.cells)

    def _node(self, flat: int) -> int:
        idx = self.node_of.get(flat)
        if idx is None:
            idx = len(self.cells)
            self.node_of[flat] = idx
            self.cells.append(flat)
        return idx

    def add_trajectory(self, traj):
        flat = trajectory_cells(traj, self.spec)
        self.point_count += len(flat)
        prev = None
        for f in flat.tolist():
            node = self._node(f)
            if prev is not None and prev != node:
                key = (prev, node)
                self.weights[key] = self.weights.get(key, 0) + 1
            prev = node
        return self

    def grid_cell(self, node: int) -> GridCell:
        row, col = divmod(self.cells[node], self.spec.W)
        return GridCell(row, col)

    def edges(self):
        """Sorted list of (src node, dst node, weight)."""
        return [(a, b, w) for (a, b), w in sorted(self.weights.items())]

    def cell_edges(self) -> dict:
        """Edge weights keyed by flat cell ids (independent of node numbering)."""
        return {(self.cells[a], self.cells[b]): w for (a, b), w in self.weights.items()}

    def __eq__(self, other):
        if not isinstance(other, TrajectoryTransitionGraph):
            return NotImplemented
        return (
            self.spec == other.spec
            and set(self.cells) == set(other.cells)
            and self.cell_edges() == other.cell_edges()
            and self.point_count == other.point_count
        )

    def in_degree(self) -> np.ndarray:
        deg = np.zeros(len(self.cells), dtype=np.int64)
        for _, b in self.weights:
            deg[b] += 1
        return deg

    def normalized_in_adjacency(self) -> sp.csr_matrix:
        """Rows aggregate in-neighbors with weight 1/sqrt(d_g d_v), d = 1 + in-degree."""
        n = len(self.cells)
        d = 1.0 + self.in_degree()
        if not self.weights:
            return sp.csr_matrix((n, n))
        src = np.array([a for a, _ in self.weights])
        dst = np.array([b for _, b in self.weights])
        vals = 1.0 / np.sqrt(d[dst] * d[src])
        return sp.csr_matrix((vals, (dst, src)), shape=(n, n))

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from_row", "from_col", "to_row", "to_col", "weight"])
            for a, b, wt in self.edges():
                ga, gb = self.grid_cell(a), self.grid_cell(b)
                w.writerow([ga.row, ga.col, gb.row, gb.col, wt])


def build_transition_graph(corpus, spec: GridSpec) -> TrajectoryTransitionGraph:
    graph = TrajectoryTransitionGraph(spec)
    for traj in corpus:
        graph.add_trajectory(traj)
    return graph


def update_transition_graph(graph: TrajectoryTransitionGraph, new_traj) -> TrajectoryTransitionGraph:
    """Fold one more trajectory into ``graph`` in place."""
    return graph.add_trajectory(new_traj)


class RoadToGridMapping:
    """Sparse cell -> intersecting segment ids."""

    def __init__(self, spec: GridSpec, n_segments: int, cell_segments: dict):
        self.spec = spec
        self.n_segments = n_segments
        self.cell_segments = {c: sorted(set(v)) for c, v in cell_segments.items()}

    def segments_in(self, flat_cell: int) -> list:
        return self.cell_segments.get(flat_cell, [])

    def matrix(self, cells) -> sp.csr_matrix:
        """Row-normalized rows of M for the given flat cells (empty rows stay zero)."""
        rows, cols, vals = [], [], []
        for i, c in enumerate(cells):
            segs = self.cell_segments.get(c, ())
            for s in segs:
                rows.append(i)
                cols.append(s)
                vals.append(1.0 / len(segs))
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(cells), self.n_segments))


def _traverse(spec: GridSpec, x0, y0, x1, y1, r0, c0, r1, c1) -> list:
    """Flat cells crossed by the straight piece (x0, y0)-(x1, y1), in order (grid traversal)."""
    l = spec.l_g
    dx, dy = x1 - x0, y1 - y0
    sx, sy = (1 if dx > 0 else -1), (1 if dy > 0 else -1)
    tx = ((c0 + (sx > 0)) * l - x0) / dx if dx else np.inf
    ty = ((r0 + (sy > 0)) * l - y0) / dy if dy else np.inf
    ddx = l / abs(dx) if dx else np.inf
    ddy = l / abs(dy) if dy else np.inf
    r, c = r0, c0
    out = [r * spec.W + c]
    for _ in range(abs(r1 - r0) + abs(c1 - c0)):
        if (r, c) == (r1, c1):
            break
        if tx < ty:
            c, tx = c + sx, tx + ddx
        elif ty < tx:
            r, ty = r + sy, ty + ddy
        else:  # exactly through a corner
            r, c, tx, ty = r + sy, c + sx, tx + ddx, ty + ddy
        if not (0 <= r < spec.H and 0 <= c < spec.W):
            break
        out.append(r * spec.W + c)
    return out


def build_mapping(spec: GridSpec, roads) -> RoadToGridMapping:
    """Rasterize each polyline onto every grid cell it passes through."""
    proj = spec.projection
    cell_segments: dict = {}
    for seg in roads.segments:
        xs, ys = proj.to_xy([q.lat for q in seg.polyline], [q.lon for q in seg.polyline])
        rows, cols = spec.cells_xy(xs, ys)
        hit = set()
        for k in range(len(xs) - 1):
            hit.update(_traverse(spec, xs[k], ys[k], xs[k + 1], ys[k + 1], rows[k], cols[k], rows[k + 1], cols[k + 1]))
        hit.update((rows * spec.W + cols).tolist())
        for flat in sorted(hit):
            cell_segments.setdefault(int(flat), []).append(seg.id)
    return RoadToGridMapping(spec, len(roads.segments), cell_segments)


def initial_grid_reps(mapping: RoadToGridMapping, road_reps, cells=None):
    """Mean road representation per cell; cells without roads get zeros.

    ``road_reps`` may be a numpy array or an autodiff tensor; the result
    has the same kind.
    """
    from .autodiff import Tensor, spmm

    if cells is None:
        cells = sorted(mapping.cell_segments)
    width_rows = road_reps.shape[0]
    if width_rows != mapping.n_segments:
        raise DimensionMismatch(f"{width_rows} road rows for {mapping.n_segments} segments")
    m = mapping.matrix(list(cells))
    if isinstance(road_reps, Tensor):
        return spmm(m, road_reps)
    return np.asarray(m @ np.asarray(road_reps))
