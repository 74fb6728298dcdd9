"""Inference: lockstep policy rollout over many trajectories and a
streaming matcher that carries only the recurrent state between steps."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoders import EncoderContext, GlobalReps, MatchingModel, encode_batch, rnn_sequence, score
from .omdp import (
    EpisodeContext,
    PreparedTrajectory,
    RewardConfig,
    State,
    TransitionRecord,
    compute_reward,
    env_step,
    init_episode,
    select_action,
)


def snapshot_reps(model: MatchingModel, ctx: EncoderContext) -> GlobalReps:
    """Eval-mode, gradient-free representations for one parameter snapshot."""
    with ad.no_grad():
        return GlobalReps(model, ctx, training=False)


def score_states(reps: GlobalReps, states):
    """Scores (B, k, n_c) and next hiddens for a list of states."""
    with ad.no_grad():
        enc = encode_batch(
            reps,
            np.stack([s.cells for s in states]),
            np.stack([s.prev_segments for s in states]),
            np.stack([s.cand_ids for s in states]),
            np.stack([s.hidden_traj for s in states]),
            np.stack([s.hidden_road for s in states]),
            np.stack([s.slot_mask for s in states]),
        )
        O = score(enc.E_t, enc.E_r, enc.E_C, reps.model)
    return O.data, enc.h_traj.data, enc.h_road.data


def experience_inference(state: State, context: EpisodeContext, reps: GlobalReps, roads,
                         reward_cfg: RewardConfig = RewardConfig(), epsilon: float = 0.0, rng=None):
    """Encode, score, act and evaluate one state.

    Returns ``(action, reward, (h_next_traj, h_next_road), scores)``.
    """
    O, h_t, h_r = score_states(reps, [state])
    action = select_action(O[0], state.slot_mask, state.cand_mask, state.cand_ids, epsilon, rng)
    reward, _ = compute_reward(action, state, context, roads, reward_cfg)
    return action, reward, (h_t[0], h_r[0]), O[0]


def rollout(reps: GlobalReps, trajs, k: int, roads=None, reward_cfg: RewardConfig | None = None,
            epsilon: float = 0.0, rng=None, collect: bool = False):
    """Match every trajectory in lockstep, one state index at a time.

    Returns predictions per trajectory and, with ``collect``, the list of
    transition records (trajectories must carry ground truth).
    """
    d_h = reps.model.cfg.d_h
    preds = [np.full(len(t), -1, dtype=np.int64) for t in trajs]
    records = []
    live = []
    for i, t in enumerate(trajs):
        if len(t):
            s, c = init_episode(t, k, d_h)
            live.append((i, s, c))
    while live:
        O, h_t, h_r = score_states(reps, [s for _, s, _ in live])
        nxt = []
        for b, (i, s, c) in enumerate(live):
            action = select_action(O[b], s.slot_mask, s.cand_mask, s.cand_ids, epsilon, rng)
            preds[i][s.start : s.start + s.n_valid] = action.seg_ids[: s.n_valid]
            reward = 0.0
            if collect:
                truth_idx = np.full(k, -1)
                ti = trajs[i].truth_index
                truth_idx[: s.n_valid] = ti[s.start : s.start + s.n_valid]
                reward, _ = compute_reward(action, s, c, roads, reward_cfg or RewardConfig())
            s2, done = env_step(s, action, trajs[i], h_t[b], h_r[b])
            if collect:
                records.append(TransitionRecord(s, action, reward, s2, done, truth_idx))
            if not done:
                nxt.append((i, s2, c))
        live = nxt
    return [p.tolist() for p in preds], records


class OnlineMatcher:
    """Streaming matcher: buffer ``k`` points, then match them in one step.

    Only the two hidden vectors and the last ``k`` matched segments are
    carried forward, so the cost of a step does not depend on how many
    points came before it.
    """

    def __init__(self, model: MatchingModel, ctx: EncoderContext, k: int = 4, n_c: int = 10, reps=None):
        self.reps = reps or snapshot_reps(model, ctx)
        self.ctx = ctx
        self.k = k
        self.n_c = min(n_c, len(ctx.roads))
        d = model.cfg.d_h
        self.h_traj = np.zeros(d)
        self.h_road = np.zeros(d)
        self.prev = np.full(k, -1, dtype=np.int64)
        self.pending: list = []
        self.count = 0
        self.step_index = 0

    def _candidates(self, p):
        x, y = self.ctx.roads.projection.point_xy(p)
        cands = self.ctx.roads.candidates_xy(x, y, self.n_c)
        ids = np.zeros(self.n_c, dtype=np.int64)
        mask = np.zeros(self.n_c, dtype=bool)
        for j, c in enumerate(cands):
            ids[j] = c.seg_id
            mask[j] = True
        return ids, mask

    def step(self, point) -> list:
        """Feed one point; returns the ``(point_idx, seg_id)`` pairs emitted now."""
        self.pending.append(point)
        if len(self.pending) < self.k:
            return []
        return self._match()

    def flush(self) -> list:
        return self._match() if self.pending else []

    def _match(self) -> list:
        k, pts = self.k, self.pending
        n = len(pts)
        rows, cols = self.ctx.spec.cells_of([p.lat for p in pts], [p.lon for p in pts])
        flat = rows * self.ctx.spec.W + cols
        cells = np.full(k, flat[-1], dtype=np.int64)
        cells[:n] = flat
        cand = np.zeros((k, self.n_c), dtype=np.int64)
        cmask = np.zeros((k, self.n_c), dtype=bool)
        for j, p in enumerate(pts):
            cand[j], cmask[j] = self._candidates(p)
        slot = np.arange(k) < n
        state = State(self.step_index, self.count, cells, slot, self.prev.copy(), cand, cmask, self.h_traj, self.h_road)
        O, h_t, h_r = score_states(self.reps, [state])
        action = select_action(O[0], slot, cmask, cand)
        self.h_traj, self.h_road = h_t[0], h_r[0]
        self.prev = action.seg_ids.copy()
        out = [(self.count + j, int(action.seg_ids[j])) for j in range(n)]
        self.count += n
        self.step_index += 1
        self.pending = []
        return out


class PrefixReencodingMatcher(OnlineMatcher):
    """Control that re-reads the whole trajectory prefix at every step.

    Decisions are identical to :class:`OnlineMatcher`; only the cost grows
    with stream position, as for matchers that rerun an offline model on
    the prefix each time.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.history_points: list = []
        self.history_cells: list = []
        self.history_segments: list = []

    def _match(self):
        pts = list(self.pending)
        # an offline matcher rerun on the prefix searches candidates for every point again
        for p in self.history_points:
            self._candidates(p)
        rows, cols = self.ctx.spec.cells_of([p.lat for p in pts], [p.lon for p in pts])
        d = self.reps.model.cfg.d_h
        # recompute both hidden states from scratch over everything seen so far
        if self.history_cells:
            with ad.no_grad():
                cells = np.asarray(self.history_cells)[None, :]
                # the last k matches are fed by the step itself
                segs = np.asarray(self.history_segments[: -self.k])[None, :]
                _, h_t = rnn_sequence(np.zeros((1, d)), self.reps.grid_rows(cells), None, self.reps.model, "rnn_t")
                _, h_r = rnn_sequence(np.zeros((1, d)), self.reps.road_rows(segs), None, self.reps.model, "rnn_r")
            self.h_traj, self.h_road = h_t.data[0], h_r.data[0]
        out = super()._match()
        self.history_points += pts
        self.history_cells += (rows * self.ctx.spec.W + cols).tolist()
        self.history_segments += ([-1] * self.k if not self.history_segments else []) + [s for _, s in out]
        return out
