"""Coordinate arithmetic and the square-cell grid over a city."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBox, InvalidCellSize, OutOfBounds

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG = 111_320.0
# points this close past the far edge are clamped into the last row/column
_EDGE_TOL_M = 1e-6


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    time: int = 0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if self.time < 0:
            raise ValueError(f"negative timestamp: {self.time}")


@dataclass(frozen=True)
class GridCell:
    row: int
    col: int


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection about a reference point, in meters."""

    lat0: float
    lon0: float

    @property
    def lon_scale(self) -> float:
        return math.cos(math.radians(self.lat0)) * METERS_PER_DEG

    def to_xy(self, lat, lon):
        x = (np.asarray(lon, dtype=float) - self.lon0) * self.lon_scale
        y = (np.asarray(lat, dtype=float) - self.lat0) * METERS_PER_DEG
        return x, y

    def point_xy(self, p: GeoPoint) -> tuple[float, float]:
        return ((p.lon - self.lon0) * self.lon_scale, (p.lat - self.lat0) * METERS_PER_DEG)

    def to_latlon(self, x, y):
        lat = self.lat0 + np.asarray(y, dtype=float) / METERS_PER_DEG
        lon = self.lon0 + np.asarray(x, dtype=float) / self.lon_scale
        return lat, lon


@dataclass(frozen=True)
class GridSpec:
    origin: GeoPoint
    l_g: float
    H: int
    W: int

    def __post_init__(self):
        if not self.l_g > 0:
            raise InvalidCellSize(f"cell side must be positive, got {self.l_g}")
        if self.H < 1 or self.W < 1:
            raise DegenerateBox(f"grid must have at least one cell, got {self.H}x{self.W}")

    @property
    def n_cells(self) -> int:
        return self.H * self.W

    @property
    def projection(self) -> LocalProjection:
        return LocalProjection(self.origin.lat, self.origin.lon)

    def cells_xy(self, x, y):
        """Vectorized cell lookup from projected offsets; returns (rows, cols)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        width, height = self.W * self.l_g, self.H * self.l_g
        bad = (x < -_EDGE_TOL_M) | (y < -_EDGE_TOL_M) | (x > width + _EDGE_TOL_M) | (y > height + _EDGE_TOL_M)
        if np.any(bad):
            raise OutOfBounds(f"{int(np.sum(bad))} point(s) outside the {height:.1f} m x {width:.1f} m grid")
        rows = np.clip(np.floor(y / self.l_g).astype(np.int64), 0, self.H - 1)
        cols = np.clip(np.floor(x / self.l_g).astype(np.int64), 0, self.W - 1)
        return rows, cols

    def cells_of(self, lat, lon):
        x, y = self.projection.to_xy(lat, lon)
        return self.cells_xy(x, y)

    def cell_center(self, cell: GridCell) -> GeoPoint:
        lat, lon = self.projection.to_latlon((cell.col + 0.5) * self.l_g, (cell.row + 0.5) * self.l_g)
        return GeoPoint(float(lat), float(lon))

    def flat_index(self, cell: GridCell) -> int:
        return cell.row * self.W + cell.col


def grid_of(p: GeoPoint, spec: GridSpec) -> GridCell:
    """Cell containing ``p``; cells are half-open ``[k*l_g, (k+1)*l_g)``."""
    rows, cols = spec.cells_of(p.lat, p.lon)
    return GridCell(int(rows), int(cols))


def spec_from_bbox(south_west: GeoPoint, north_east: GeoPoint, l_g: float = 5.0) -> GridSpec:
    if not l_g > 0:
        raise InvalidCellSize(f"cell side must be positive, got {l_g}")
    proj = LocalProjection(south_west.lat, south_west.lon)
    width, height = proj.point_xy(north_east)
    if width <= 0 or height <= 0:
        raise DegenerateBox(f"box extent must be positive, got {width:.3f} m x {height:.3f} m")
    W = max(1, math.ceil(width / l_g - 1e-9))
    H = max(1, math.ceil(height / l_g - 1e-9))
    return GridSpec(GeoPoint(south_west.lat, south_west.lon), float(l_g), H, W)
