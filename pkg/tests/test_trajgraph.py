import time

import numpy as np
import pytest
from shapely.geometry import LineString, box

from onlinemm.errors import DimensionMismatch, OutOfBounds
from onlinemm.geo import GridSpec, spec_from_bbox
from onlinemm.roadnet import build_link_graph
from onlinemm.trajgraph import (
    TrajectoryTransitionGraph,
    build_mapping,
    build_transition_graph,
    initial_grid_reps,
    update_transition_graph,
)

from conftest import ORIGIN, seg, xy

SPEC = GridSpec(ORIGIN, 10.0, 10, 10)
# cell centers by label
A, B, C, D = (5, 5), (15, 5), (25, 5), (35, 5)


def traj(*cells):
    return [xy(x, y) for x, y in cells]


def flat(c):
    return int(c[1] // 10) * SPEC.W + int(c[0] // 10)


def test_example_graph():
    g = build_transition_graph([traj(A, B, B, C), traj(A, B)], SPEC)
    assert g.cell_edges() == {(flat(A), flat(B)): 2, (flat(B), flat(C)): 1}
    assert len(g) == 3 and g.point_count == 6


def test_single_point_and_empty():
    g = build_transition_graph([traj(A)], SPEC)
    assert len(g) == 1 and g.cell_edges() == {}
    assert len(build_transition_graph([], SPEC)) == 0


def test_updates():
    g = build_transition_graph([traj(A, B, B, C), traj(A, B)], SPEC)
    update_transition_graph(g, traj(A, B))
    assert g.cell_edges()[(flat(A), flat(B))] == 3
    update_transition_graph(g, traj(C, D))
    assert len(g) == 4


def test_out_of_bounds():
    with pytest.raises(OutOfBounds):
        build_transition_graph([traj((500, 5))], SPEC)


def random_corpus(rng, n):
    out = []
    for _ in range(n):
        L = int(rng.integers(1, 12))
        out.append(traj(*rng.uniform(0, 99.9, size=(L, 2))))
    return out


@pytest.mark.parametrize("trial", range(50))
def test_update_equals_rebuild(trial):
    rng = np.random.default_rng(trial)
    corpus = random_corpus(rng, int(rng.integers(0, 8)))
    extra = random_corpus(rng, 1)[0]
    g = build_transition_graph(corpus, SPEC)
    update_transition_graph(g, extra)
    assert g == build_transition_graph(corpus + [extra], SPEC)


def test_weight_sum_counts_cell_changes(rng):
    corpus = random_corpus(rng, 30)
    g = build_transition_graph(corpus, SPEC)
    changes = 0
    for t in corpus:
        cells = [flat((p_x, p_y)) for p_x, p_y in (SPEC.projection.point_xy(p) for p in t)]
        changes += sum(a != b for a, b in zip(cells, cells[1:]))
    assert sum(g.weights.values()) == changes
    assert all(w >= 1 for w in g.weights.values())
    assert all(a != b for a, b in g.weights)


def test_build_is_linear(rng):
    spec = spec_from_bbox(ORIGIN, xy(1000, 1000), 5)
    base = [traj(*rng.uniform(0, 999, size=(50, 2))) for _ in range(200)]
    times = []
    for mult in (1, 2, 4):
        corpus = base * mult
        best = min(_timed(lambda: build_transition_graph(corpus, spec)) for _ in range(3))
        times.append(best)
    assert times[1] / times[0] < 2 * 1.5 and times[2] / times[1] < 2 * 1.5


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def test_normalized_adjacency():
    g = build_transition_graph([traj(A, B), traj(C, B)], SPEC)
    m = g.normalized_in_adjacency().toarray()
    b = g.node_of[flat(B)]
    a = g.node_of[flat(A)]
    # B has in-degree 2, A has 0
    assert m[b, a] == pytest.approx(1 / np.sqrt(3 * 1))
    assert m[a].sum() == 0


def test_mapping_examples():
    roads = build_link_graph([seg(0, (2, 2), (8, 8)), seg(1, (12, 15), (28, 15))])
    m = build_mapping(SPEC, roads)
    assert m.segments_in(flat((5, 5))) == [0]
    assert m.segments_in(flat((15, 15))) == [1] and m.segments_in(flat((25, 15))) == [1]
    assert m.segments_in(flat((55, 55))) == []


def test_mapping_covers_crossed_cells(rng):
    spec = GridSpec(ORIGIN, 5.0, 40, 40)
    for _ in range(200):
        (x0, y0), (x1, y1) = rng.uniform(1, 199, size=(2, 2))
        roads = build_link_graph([seg(0, (x0, y0), (x1, y1))])
        got = {c for c, v in build_mapping(spec, roads).cell_segments.items() if 0 in v}
        # dense samples along the segment must all be covered
        t = np.linspace(0, 1, 5000)
        r, c = spec.cells_xy(x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        assert set((r * spec.W + c).tolist()) <= got
        # and every listed cell must intersect the line (geometry oracle)
        line = LineString([(x0, y0), (x1, y1)])
        for f in got:
            row, col = divmod(f, spec.W)
            assert line.intersects(box(col * 5.0, row * 5.0, (col + 1) * 5.0, (row + 1) * 5.0))


def test_initial_reps():
    roads = build_link_graph([seg(0, (2, 2), (8, 4)), seg(1, (3, 7), (7, 8)), seg(2, (12, 5), (18, 5))])
    m = build_mapping(SPEC, roads)
    reps = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 5.0]])
    out = initial_grid_reps(m, reps, [flat(A), flat(B), flat((55, 55))])
    np.testing.assert_allclose(out, [[2.0, 4.0], [5.0, 5.0], [0.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        initial_grid_reps(m, reps[:2])


def test_dump_csv(tmp_path):
    g = build_transition_graph([traj(A, B, C)], SPEC)
    g.dump_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "from_row,from_col,to_row,to_col,weight"
    assert lines[1:] == ["0,0,0,1,1", "0,1,0,2,1"]
