import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlinemm.errors import DegenerateBox, InvalidCellSize, OutOfBounds
from onlinemm.geo import GeoPoint, GridCell, GridSpec, grid_of, haversine_m, spec_from_bbox

from conftest import ORIGIN, PROJ, xy


def great_circle(a, b, r=6_371_000.0):
    # spherical law of cosines, an independent formula from haversine
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return r * math.acos(min(1.0, max(-1.0, c)))


def test_haversine_identity_and_reference():
    a = GeoPoint(0, 0)
    assert haversine_m(a, a) == 0.0
    d = haversine_m(GeoPoint(0, 0), GeoPoint(0, 0.001))
    assert d == pytest.approx(111.19, abs=0.01)
    assert d == pytest.approx(great_circle(GeoPoint(0, 0), GeoPoint(0, 0.001)), rel=1e-6)


coords = st.tuples(st.floats(39.8, 40.0), st.floats(116.2, 116.4))


@given(coords, coords)
@settings(max_examples=100, deadline=None)
def test_haversine_symmetric(a, b):
    pa, pb = GeoPoint(*a), GeoPoint(*b)
    assert haversine_m(pa, pb) == haversine_m(pb, pa)


@given(coords, coords, coords)
@settings(max_examples=100, deadline=None)
def test_haversine_triangle(a, b, c):
    pa, pb, pc = GeoPoint(*a), GeoPoint(*b), GeoPoint(*c)
    assert haversine_m(pa, pc) <= (haversine_m(pa, pb) + haversine_m(pb, pc)) * (1 + 1e-6) + 1e-9


def test_grid_of_examples():
    spec = GridSpec(ORIGIN, 5.0, 10, 10)
    assert grid_of(xy(12, 3), spec) == GridCell(0, 2)
    assert grid_of(ORIGIN, spec) == GridCell(0, 0)
    assert grid_of(xy(5, 0), spec).col == 1  # half-open cells


def test_grid_of_out_of_bounds():
    spec = GridSpec(ORIGIN, 5.0, 2, 2)
    with pytest.raises(OutOfBounds):
        grid_of(xy(11, 1), spec)
    with pytest.raises(OutOfBounds):
        grid_of(xy(-1, 1), spec)


def test_spec_from_bbox_examples():
    s = spec_from_bbox(ORIGIN, xy(100, 50), 10)
    assert (s.H, s.W) == (5, 10)
    s = spec_from_bbox(ORIGIN, xy(101, 50), 10)
    assert (s.H, s.W) == (5, 11)
    with pytest.raises(InvalidCellSize):
        spec_from_bbox(ORIGIN, xy(100, 50), 0)
    with pytest.raises(DegenerateBox):
        spec_from_bbox(ORIGIN, xy(100, 0), 10)


@given(st.floats(0, 499.999), st.floats(0, 299.999), st.sampled_from([5.0, 7.5, 25.0]))
@settings(max_examples=200, deadline=None)
def test_grid_total_and_center_close(x, y, l_g):
    spec = spec_from_bbox(ORIGIN, xy(500, 300), l_g)
    p = xy(x, y)
    cell = grid_of(p, spec)
    assert 0 <= cell.row < spec.H and 0 <= cell.col < spec.W
    c = spec.cell_center(cell)
    assert haversine_m(p, c) <= l_g * math.sqrt(2) / 2 + 1e-3 * l_g


def test_vectorized_cells_match_scalar(rng):
    spec = spec_from_bbox(ORIGIN, xy(300, 300), 5)
    xs, ys = rng.uniform(0, 299, 50), rng.uniform(0, 299, 50)
    pts = [xy(a, b) for a, b in zip(xs, ys)]
    rows, cols = spec.cells_of([p.lat for p in pts], [p.lon for p in pts])
    for p, r, c in zip(pts, rows, cols):
        assert grid_of(p, spec) == GridCell(int(r), int(c))


def test_projection_round_trip(rng):
    x, y = rng.uniform(-500, 500, 20), rng.uniform(-500, 500, 20)
    lat, lon = PROJ.to_latlon(x, y)
    x2, y2 = PROJ.to_xy(lat, lon)
    np.testing.assert_allclose(x2, x, atol=1e-6)
    np.testing.assert_allclose(y2, y, atol=1e-6)


def test_geopoint_validation():
    with pytest.raises(ValueError):
        GeoPoint(91, 0)
    with pytest.raises(ValueError):
        GeoPoint(0, 181)
