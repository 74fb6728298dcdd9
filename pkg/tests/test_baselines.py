import time

import numpy as np
import pytest

from onlinemm.baselines import (
    HmmConfig,
    HmmScorer,
    MdpConfig,
    MdpMatcher,
    OnlineViterbi,
    brute_force_best_path,
    greedy_nearest_match,
    hmm_online_match,
    hmm_path_score,
    iter_hmm_online,
    mdp_value_iteration_match,
)
from onlinemm.errors import NoCandidates, TooLarge
from onlinemm.omdp import PreparedTrajectory, prepare_trajectory
from onlinemm.roadnet import build_link_graph

from conftest import seg, xy
from suites import random_lattice, viterbi_vs_brute


def prepared(points, roads, n_c=4):
    return prepare_trajectory(points, roads, None, n_c)


# chain 0 -> 1 -> 2 along y = 0, plus an isolated segment 3 parallel to 1 at y = 12
CHAIN = build_link_graph([
    seg(0, (0, 0), (100, 0), a=0, b=1),
    seg(1, (100, 0), (200, 0), a=1, b=2),
    seg(2, (200, 0), (300, 0), a=2, b=3),
    seg(3, (100, 12), (200, 12), a=7, b=8),
])


def test_single_point_is_nearest():
    p = prepared([xy(150, 10)], CHAIN)
    assert hmm_online_match(p, CHAIN) == [3]
    assert mdp_value_iteration_match(p, CHAIN) == [3]
    assert greedy_nearest_match(p, CHAIN) == [3]


def test_disconnected_nearest_loses_to_connected_runner_up():
    p = prepared([xy(50, 0, 0), xy(150, 7, 15), xy(250, 0, 30)], CHAIN)
    assert greedy_nearest_match(p, CHAIN)[1] == 3
    strong = HmmConfig(sigma=20, beta=5)
    assert hmm_online_match(p, CHAIN, strong) == [0, 1, 2]
    want = brute_force_best_path(p, lambda c: hmm_path_score(p, CHAIN, strong, c))
    assert want == [0, 1, 2]
    assert mdp_value_iteration_match(p, CHAIN) == [0, 1, 2]


def test_greedy_tie_breaks_by_lower_id():
    roads = build_link_graph([seg(0, (0, 30), (100, 30)), seg(1, (0, 10), (100, 10)), seg(2, (0, -10), (100, -10))])
    assert greedy_nearest_match(prepared([xy(50, 0)], roads), roads) == [1]


def test_viterbi_equals_brute_force():
    assert viterbi_vs_brute(np.random.default_rng(5), 100) == 0


def test_online_emission_lag():
    p = prepared([xy(50, 0, 0), xy(150, 7, 15), xy(250, 0, 30)], CHAIN)
    vit = OnlineViterbi(HmmScorer(CHAIN, HmmConfig()), lag=1)
    emitted = []
    for i in range(3):
        ids, dist = p.cand_ids[i][p.cand_mask[i]], p.cand_dist[i][p.cand_mask[i]]
        out = vit.push(p.points[i], ids, dist)
        assert [t for t, _ in out] == ([] if i == 0 else [i - 1])
        emitted += out
    emitted += vit.finish()
    assert [t for t, _ in emitted] == [0, 1, 2]
    assert [s for _, s in iter_hmm_online(p, CHAIN)] == [s for _, s in emitted]


def test_no_candidates():
    p = PreparedTrajectory([xy(0, 0)], np.zeros(1, int), np.zeros((1, 2), int), np.zeros((1, 2), bool),
                           np.full((1, 2), np.inf))
    for f in (hmm_online_match, greedy_nearest_match, mdp_value_iteration_match):
        with pytest.raises(NoCandidates):
            f(p, CHAIN)


def test_brute_force_enumeration_and_limit():
    p = PreparedTrajectory([xy(0, 0), xy(1, 0)], np.zeros(2, int), np.array([[7, 8], [9, 4]]),
                           np.ones((2, 2), bool), np.zeros((2, 2)))
    table = {(0, 0): 1, (0, 1): 3, (1, 0): 2, (1, 1): 3}
    assert brute_force_best_path(p, lambda c: table[c]) == [7, 4]
    with pytest.raises(TooLarge):
        brute_force_best_path(p, lambda c: 0, limit=3)


def test_mdp_matches_exhaustive_return():
    rng = np.random.default_rng(8)
    for _ in range(40):
        p, roads = random_lattice(rng, int(rng.integers(1, 6)), int(rng.integers(1, 4)))
        m = MdpMatcher(roads, MdpConfig())
        got = m.match(p)
        best = brute_force_best_path(p, lambda c: m.path_score(p, c))
        idx = [int(np.flatnonzero(p.cand_ids[i] == s)[0]) for i, s in enumerate(got)]
        ref = [int(np.flatnonzero(p.cand_ids[i] == s)[0]) for i, s in enumerate(best)]
        assert m.path_score(p, idx) == pytest.approx(m.path_score(p, ref), abs=1e-9)


def test_mdp_nonconvergence_still_returns(caplog):
    p = prepared([xy(50, 0, 0), xy(150, 7, 15), xy(250, 0, 30)], CHAIN)
    m = MdpMatcher(CHAIN, MdpConfig(max_iter=1, tol=0.0))
    assert len(m.match(p)) == 3 and not m.converged


def test_config_validation():
    with pytest.raises(ValueError):
        HmmConfig(sigma=0)
    with pytest.raises(ValueError):
        MdpConfig(discount=1.0)


def test_hmm_step_latency_flat():
    roads = build_link_graph([seg(i, (100 * i, 0), (100 * (i + 1), 0), a=i, b=i + 1) for i in range(60)])
    pts = [xy(100 * i * 60 / 120 + 5, 3, 15 * i) for i in range(120)]
    p = prepared(pts, roads)
    vit = OnlineViterbi(HmmScorer(roads), lag=1)
    times = []
    for i in range(len(p)):
        t0 = time.perf_counter_ns()
        vit.push(p.points[i], p.cand_ids[i], p.cand_dist[i])
        times.append(time.perf_counter_ns() - t0)
    assert np.median(times[95:105]) <= 2 * np.median(times[5:15])
