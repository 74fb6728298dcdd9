from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlinemm.errors import EmptyTrajectory, MissingGroundTruth, NoValidCandidate
from onlinemm.omdp import (
    Action,
    EpisodeContext,
    PreparedTrajectory,
    RewardConfig,
    compute_reward,
    env_step,
    init_episode,
    n_states,
    prepare_trajectory,
    select_action,
)
from onlinemm.roadnet import build_link_graph

from conftest import seg, xy

# a 3-segment chain 0 -> 1 -> 2 plus a disconnected segment 3
ROADS = build_link_graph([
    seg(0, (0, 0), (100, 0), a=0, b=1),
    seg(1, (100, 0), (200, 0), a=1, b=2),
    seg(2, (200, 0), (300, 0), a=2, b=3),
    seg(3, (0, 500), (100, 500), a=8, b=9),
])


def fake_traj(n, n_c=3, truth=None):
    ids = np.tile(np.arange(n_c), (n, 1))
    return PreparedTrajectory([xy(10 * i, 0, 15 * i) for i in range(n)], np.arange(n), ids,
                              np.ones((n, n_c), dtype=bool), np.tile(np.arange(n_c, dtype=float), (n, 1)),
                              None if truth is None else np.asarray(truth))


def one_slot_state(seg_id_truth, start=0):
    t = fake_traj(start + 1, n_c=4, truth=[seg_id_truth] * (start + 1))
    s, _ = init_episode(t, 1, 4)
    s.start = start
    return s


def act(seg_id):
    return Action(np.array([seg_id]), np.array([seg_id]))


def test_reward_table():
    cfg = RewardConfig()
    # correct, streak >= theta, same segment as predecessor
    ctx = EpisodeContext(np.array([1]), streak=3, prev_segment=1)
    r, parts = compute_reward(act(1), one_slot_state(1), ctx, ROADS, cfg)
    assert r == 1 + 0.01 + 0.02 and parts == [(1.0, 0.01, 0.0, 0.02)]
    # wrong pick that is in the history, predecessor unreachable
    ctx = EpisodeContext(np.array([0]), streak=5, history=OrderedDict({3: True}), prev_segment=0)
    r, parts = compute_reward(act(3), one_slot_state(0), ctx, ROADS, cfg)
    assert r == -1 - 0.05 + 0 and parts == [(-1.0, 0.0, -0.05, 0.0)]
    # correct, streak < theta, delta = 2
    ctx = EpisodeContext(np.array([2]), streak=1, prev_segment=0)
    r, parts = compute_reward(act(2), one_slot_state(2), ctx, ROADS, cfg)
    assert r == 1 + 0 + 0.01 and parts == [(1.0, 0.0, 0.0, 0.01)]


def test_first_slot_skips_connectivity():
    t = fake_traj(2, n_c=4, truth=[0, 1])
    s, ctx = init_episode(t, 2, 4)
    r, parts = compute_reward(Action(np.array([0, 1]), np.array([0, 1])), s, ctx, ROADS)
    assert parts[0][3] == 0.0 and parts[1][3] == 0.02
    assert ctx.streak == 2 and list(ctx.history) == [0, 1]


def test_missing_truth():
    t = fake_traj(2)
    s, ctx = init_episode(t, 2, 4)
    with pytest.raises(MissingGroundTruth):
        compute_reward(Action(np.array([0, 1]), np.array([0, 1])), s, ctx, ROADS)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40), st.integers(1, 4))
@settings(max_examples=80, deadline=None)
def test_streak_queue_and_bounds(pairs, k):
    truth = [t for t, _ in pairs]
    picks = [p for _, p in pairs]
    cfg = RewardConfig(history_capacity=3)
    traj = fake_traj(len(pairs), n_c=4, truth=truth)
    state, ctx = init_episode(traj, k, 4)
    streak, hist = 0, []
    while state is not None:
        n = state.n_valid
        seg_ids = np.full(k, -1)
        seg_ids[:n] = picks[state.start : state.start + n]
        a = Action(seg_ids.copy(), seg_ids)
        _, parts = compute_reward(a, state, ctx, ROADS, cfg)
        for j, (r_ac, r_cs, r_dp, r_rc) in enumerate(parts):
            pos = state.start + j
            correct = picks[pos] == truth[pos]
            assert r_ac == (1.0 if correct else -1.0)
            assert r_cs == (cfg.alpha if correct and streak >= cfg.theta else 0.0)
            assert r_dp == (-cfg.beta if not correct and picks[pos] in hist else 0.0)
            assert -1 - cfg.beta <= r_ac + r_cs + r_dp + r_rc <= 1 + cfg.alpha + cfg.gamma_rc
            streak = streak + 1 if correct else 0
            if picks[pos] in hist:
                hist.remove(picks[pos])
            hist = (hist + [picks[pos]])[-3:]
        assert ctx.streak == streak and list(ctx.history) == hist
        state, _ = env_step(state, a, traj, state.hidden_traj, state.hidden_road)


def test_init_episode_examples():
    s, ctx = init_episode(fake_traj(10), 4, 8)
    assert s.start == 0 and s.slot_mask.all() and np.all(s.prev_segments == -1)
    assert np.all(s.hidden_traj == 0) and s.hidden_road.shape == (8,)
    s, _ = init_episode(fake_traj(3), 4, 8)
    assert s.n_valid == 3 and n_states(3, 4) == 1
    assert n_states(10, 1) == 10
    with pytest.raises(EmptyTrajectory):
        init_episode(fake_traj(0), 4, 8)


def test_env_step_examples():
    t = fake_traj(8)
    s1, _ = init_episode(t, 4, 2)
    a = Action(np.array([0, 1, 2, 0]), np.array([0, 1, 2, 0]))
    h_t, h_r = np.array([0.1, 0.2]), np.array([0.3, 0.4])
    s2, done = env_step(s1, a, t, h_t, h_r)
    assert not done and s2.start == 4
    np.testing.assert_array_equal(s2.prev_segments, a.seg_ids)
    np.testing.assert_array_equal(s2.hidden_traj, h_t)
    np.testing.assert_array_equal(s2.hidden_road, h_r)
    s3, done = env_step(s2, a, t, h_t, h_r)
    assert s3 is None and done


@pytest.mark.parametrize("length,k", [(1, 4), (7, 2), (8, 4), (9, 4), (10, 1)])
def test_state_count(length, k):
    t = fake_traj(length)
    s, _ = init_episode(t, k, 2)
    count = 0
    while s is not None:
        count += 1
        a = select_action(np.zeros((k, 3)), s.slot_mask, s.cand_mask, s.cand_ids)
        s, _ = env_step(s, a, t, s.hidden_traj, s.hidden_road)
    assert count == n_states(length, k)


def test_select_action_examples():
    mask = np.ones((1, 3), dtype=bool)
    assert select_action(np.array([[0.2, 0.9, 0.1]]), np.array([True]), mask).indices[0] == 1
    assert select_action(np.zeros((1, 3)), np.array([True]), mask).indices[0] == 0
    padded = np.array([[True, False, True]])
    assert select_action(np.array([[0.2, 0.9, 0.1]]), np.array([True]), padded).indices[0] == 0
    a = select_action(np.zeros((2, 3)), np.array([True, False]), np.ones((2, 3), bool), np.array([[5, 6, 7], [8, 9, 10]]))
    np.testing.assert_array_equal(a.seg_ids, [5, -1])
    with pytest.raises(NoValidCandidate):
        select_action(np.zeros((1, 3)), np.array([True]), np.zeros((1, 3), bool))


def test_epsilon_one_is_uniform_and_reproducible():
    scores = np.tile([[5.0, 0.0, 0.0, 0.0]], (4000, 1))
    slot, mask = np.ones(4000, bool), np.ones((4000, 4), bool)
    a = select_action(scores, slot, mask, epsilon=1.0, rng=np.random.default_rng(3))
    b = select_action(scores, slot, mask, epsilon=1.0, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a.indices, b.indices)
    freq = np.bincount(a.indices, minlength=4) / 4000
    assert np.all(np.abs(freq - 0.25) < 0.03)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
@settings(max_examples=60, deadline=None)
def test_argmax_invariant_under_monotone_maps(vals):
    s = np.array([vals])
    mask = np.ones_like(s, dtype=bool)
    base = select_action(s, np.array([True]), mask).indices[0]
    for f in (lambda x: 3 * x + 7, np.tanh, lambda x: np.exp(x / 50) - 1):
        assert select_action(f(s), np.array([True]), mask).indices[0] == base or np.isclose(f(s)[0].max(), f(s)[0][base])


def test_prepare_trajectory(tiny_world):
    t = tiny_world.dataset.trajectories[0]
    p = prepare_trajectory(t, tiny_world.roads, tiny_world.dataset.grid, 10)
    assert p.cand_ids.shape == (len(t), 10) and p.cand_mask.all()
    assert np.all(np.diff(p.cand_dist, axis=1) >= 0)
    ti = p.truth_index
    assert np.all(p.cand_ids[np.arange(len(t)), ti][ti >= 0] == np.asarray(t.truth)[ti >= 0])
