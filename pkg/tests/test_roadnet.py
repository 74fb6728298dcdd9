import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlinemm.errors import DuplicateId, EmptyNetwork, UnknownSegment
from onlinemm.geo import spec_from_bbox
from onlinemm.roadnet import (
    RoadSegment,
    build_link_graph,
    candidates,
    connectivity_delta,
    point_segment_distance_m,
    read_road_csv,
    segment_features,
    write_road_csv,
)

from conftest import ORIGIN, seg, xy


def test_edge_direction():
    g = build_link_graph([seg(0, (0, 0), (100, 0)), seg(1, (100, 0), (100, 100))])
    assert list(g.out_edges[0]) == [1] and list(g.out_edges[1]) == []
    assert list(g.in_edges[1]) == [0]


def test_edge_direction_from_node_ids():
    g = build_link_graph([seg(0, (0, 0), (100, 0), a=1, b=2), seg(1, (100, 50), (100, 100), a=2, b=3)])
    # node ids win over geometry
    assert list(g.out_edges[0]) == [1]


def test_single_segment_and_errors():
    g = build_link_graph([seg(0, (0, 0), (10, 0))])
    assert len(g) == 1 and g.n_edges == 0
    with pytest.raises(EmptyNetwork):
        build_link_graph([])
    with pytest.raises(DuplicateId):
        build_link_graph([seg(0, (0, 0), (10, 0)), seg(0, (10, 0), (20, 0))])


def test_self_loop_rules():
    loop = seg(0, (0, 0), (50, 0), (50, 50), (0, 0))
    assert list(build_link_graph([loop]).out_edges[0]) == []
    g = build_link_graph([loop, seg(1, (0, 0), (-50, 0))])
    assert 0 in g.out_edges[0] and 1 in g.out_edges[0]


def test_snap_tolerance():
    g = build_link_graph([seg(0, (0, 0), (100, 0)), seg(1, (100.3, 0), (200, 0))])
    assert list(g.out_edges[0]) == [1]
    g = build_link_graph([seg(0, (0, 0), (100, 0)), seg(1, (101, 0), (200, 0))])
    assert list(g.out_edges[0]) == []


def test_point_segment_distance():
    s = seg(0, (0, 0), (100, 0))
    assert point_segment_distance_m(xy(30, 0), s) == pytest.approx(0, abs=1e-6)
    assert point_segment_distance_m(xy(50, 10), s) == pytest.approx(10, abs=0.05)
    assert point_segment_distance_m(xy(103, 4), s) == pytest.approx(5, abs=0.01)


def test_candidate_examples():
    g = build_link_graph([seg(0, (0, 20), (100, 20)), seg(1, (0, 5), (100, 5)), seg(2, (0, -10), (100, -10))])
    c = candidates(xy(50, 0), 2, g)
    assert [x.seg_id for x in c] == [1, 2]
    assert [round(x.distance, 2) for x in c] == [5.0, 10.0]
    assert len(candidates(xy(50, 0), 10, g)) == 3
    tie = build_link_graph([seg(0, (0, 7), (100, 7)), seg(1, (0, -7), (100, -7))])
    assert candidates(xy(50, 0), 1, tie)[0].seg_id == 0


def random_network(rng, n):
    segs = []
    for i in range(n):
        x, y = rng.uniform(0, 2000, 2)
        pts = [(x, y)]
        for _ in range(int(rng.integers(1, 4))):
            x, y = x + rng.uniform(-80, 80), y + rng.uniform(-80, 80)
            pts.append((x, y))
        segs.append(seg(i, *pts))
    return segs


@pytest.mark.parametrize("n", [5, 120, 1000])
def test_candidates_match_brute_force(n, rng):
    segs = random_network(rng, n)
    g = build_link_graph(segs)
    for _ in range(25):
        p = xy(*rng.uniform(-100, 2100, 2))
        d = np.array([point_segment_distance_m(p, s, g.projection) for s in segs])
        order = np.lexsort((np.arange(n), d))[:10]
        got = candidates(p, 10, g)
        assert [c.seg_id for c in got] == order.tolist()
        np.testing.assert_allclose([c.distance for c in got], d[order], atol=1e-9)


def path_graph(n, extra=()):
    segs = [seg(i, (100 * i, 0), (100 * i + 100, 0), a=i, b=i + 1) for i in range(n)]
    return build_link_graph(segs)


def test_delta_examples():
    g = path_graph(3)
    assert connectivity_delta(1, 1, g) == 1
    assert connectivity_delta(0, 1, g) == 1
    assert connectivity_delta(0, 2, g, cutoff=8) == 2
    assert connectivity_delta(2, 0, g) is None
    assert connectivity_delta(0, 2, g, cutoff=1) is None
    with pytest.raises(UnknownSegment):
        connectivity_delta(0, 9, g)


@given(st.integers(2, 12), st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)), max_size=30), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_delta_matches_path_enumeration(n, pairs, cutoff):
    # segments between abstract nodes; node ids define adjacency
    nodes = [(a % (n + 1), b % (n + 1)) for a, b in pairs[:n]]
    while len(nodes) < n:
        nodes.append((len(nodes), len(nodes) + 1))
    segs = [seg(i, (10 * i, 0), (10 * i + 5, 3), a=a, b=b) for i, (a, b) in enumerate(nodes)]
    g = build_link_graph(segs)
    succ = {i: [j for j in range(n) if nodes[i][1] == nodes[j][0]] for i in range(n)}

    def shortest(u, v):
        best = None
        for length in range(1, cutoff + 1):
            for mid in itertools.product(range(n), repeat=length - 1):
                path = (u, *mid, v)
                if all(b in succ[a] for a, b in zip(path, path[1:])):
                    return length
        return best

    for u in range(n):
        for v in range(n):
            want = 1 if u == v else shortest(u, v)
            got = connectivity_delta(u, v, g, cutoff)
            assert got == want
            assert got is None or got >= 1


def test_segment_features():
    spec = spec_from_bbox(ORIGIN, xy(200, 200), 10)
    g = build_link_graph([seg(0, (0, 0), (0.001, 0))])
    f = segment_features(g, spec)
    assert f.shape == (1, 8) and np.all(f == 0)
    g = build_link_graph([seg(0, (0, 0), (199, 199)), seg(1, (199, 199), (0, 0))])
    f = segment_features(g, spec)
    assert f.min() == 0 and f.max() == 1
    assert np.all(f[0, [0, 1, 4, 5]] == 0)  # starts at the origin cell
    g = build_link_graph([seg(0, (0, 0), (50, 0)), seg(1, (60, 60), (199, 150))])
    f = segment_features(g, spec)
    assert np.all((f >= 0) & (f <= 1))


def test_road_csv_round_trip(tmp_path):
    segs = [seg(0, (0, 0), (50, 0), (50, 40), a=1, b=2), seg(1, (50, 40), (0, 0))]
    write_road_csv(tmp_path / "r.csv", segs)
    back = read_road_csv(tmp_path / "r.csv")
    assert [s.id for s in back] == [0, 1]
    assert str(back[0].from_node) == "1"
    assert back[1].from_node is None
    for a, b in zip(segs, back):
        assert len(a.polyline) == len(b.polyline)
        for p, q in zip(a.polyline, b.polyline):
            assert p.lat == pytest.approx(q.lat, abs=1e-12) and p.lon == pytest.approx(q.lon, abs=1e-12)
