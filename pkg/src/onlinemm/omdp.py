"""Online MDP: states over chunks of ``k`` points, argmax actions,
environment transitions and the four-part reward."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTrajectory, MissingGroundTruth, NoValidCandidate
from .roadnet import DEFAULT_CUTOFF, LinkConnectionGraph, connectivity_delta
from .trajgraph import trajectory_cells


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.01  # consecutive-success bonus
    beta: float = 0.05  # detour penalty
    gamma_rc: float = 0.02  # connectivity weight
    theta: int = 3  # streak threshold
    history_capacity: int = 10
    cutoff: int = DEFAULT_CUTOFF

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma_rc) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.theta < 1 or self.history_capacity < 1 or self.cutoff < 1:
            raise ValueError("theta, history capacity and cutoff must be >= 1")


@dataclass
class PreparedTrajectory:
    """A trajectory with grid cells and candidate sets precomputed."""

    points: list
    cells: np.ndarray  # (L,) flat grid cells
    cand_ids: np.ndarray  # (L, n_c), padded with 0
    cand_mask: np.ndarray  # (L, n_c) bool
    cand_dist: np.ndarray  # (L, n_c), inf where padded
    truth: np.ndarray | None = None  # (L,) segment ids
    id: object = None

    def __len__(self):
        return len(self.points)

    @property
    def truth_index(self) -> np.ndarray:
        """Position of the true segment in each candidate list, -1 when absent."""
        if self.truth is None:
            return np.full(len(self), -1)
        hit = (self.cand_ids == self.truth[:, None]) & self.cand_mask
        return np.where(hit.any(axis=1), hit.argmax(axis=1), -1)


def prepare_trajectory(traj, roads: LinkConnectionGraph, spec=None, n_c: int = 10) -> PreparedTrajectory:
    points = list(getattr(traj, "points", traj))
    n_c_eff = min(n_c, len(roads))
    L = len(points)
    ids = np.zeros((L, n_c), dtype=np.int64)
    mask = np.zeros((L, n_c), dtype=bool)
    dist = np.full((L, n_c), np.inf)
    if L:
        xs, ys = roads.projection.to_xy([p.lat for p in points], [p.lon for p in points])
        for i in range(L):
            cands = roads.candidates_xy(float(xs[i]), float(ys[i]), n_c_eff)
            for j, c in enumerate(cands):
                ids[i, j] = c.seg_id
                dist[i, j] = c.distance
                mask[i, j] = True
    truth = getattr(traj, "truth", None)
    return PreparedTrajectory(
        points,
        trajectory_cells(points, spec) if spec is not None else np.zeros(L, dtype=np.int64),
        ids,
        mask,
        dist,
        None if truth is None else np.asarray(truth, dtype=np.int64),
        getattr(traj, "id", None),
    )


@dataclass
class State:
    step_index: int
    start: int  # index of the first current point in the trajectory
    cells: np.ndarray  # (k,)
    slot_mask: np.ndarray  # (k,) bool
    prev_segments: np.ndarray  # (k,) previously matched ids, -1 = empty prefix
    cand_ids: np.ndarray  # (k, n_c)
    cand_mask: np.ndarray  # (k, n_c)
    hidden_traj: np.ndarray  # (d_h,)
    hidden_road: np.ndarray  # (d_h,)

    @property
    def k(self) -> int:
        return len(self.slot_mask)

    @property
    def n_valid(self) -> int:
        return int(self.slot_mask.sum())


@dataclass
class Action:
    indices: np.ndarray  # (k,) candidate index per slot, -1 for padded slots
    seg_ids: np.ndarray  # (k,) chosen segment ids, -1 for padded slots


@dataclass
class EpisodeContext:
    truth: np.ndarray | None
    streak: int = 0
    history: OrderedDict = field(default_factory=OrderedDict)
    prev_segment: int | None = None


@dataclass
class TransitionRecord:
    state: State
    action: Action
    reward: float
    next_state: State | None
    done: bool
    truth_index: np.ndarray  # (k,) positive candidate per slot for alignment, -1 if none


def _slice_state(traj: PreparedTrajectory, step_index: int, k: int, prev_segments, h_t, h_r) -> State:
    start = step_index * k
    stop = min(start + k, len(traj))
    n = stop - start
    n_c = traj.cand_ids.shape[1]
    cells = np.zeros(k, dtype=np.int64)
    mask = np.zeros(k, dtype=bool)
    cand = np.zeros((k, n_c), dtype=np.int64)
    cmask = np.zeros((k, n_c), dtype=bool)
    cells[:n] = traj.cells[start:stop]
    cells[n:] = traj.cells[stop - 1]
    mask[:n] = True
    cand[:n] = traj.cand_ids[start:stop]
    cmask[:n] = traj.cand_mask[start:stop]
    return State(step_index, start, cells, mask, np.asarray(prev_segments, dtype=np.int64), cand, cmask,
                 np.asarray(h_t, dtype=float), np.asarray(h_r, dtype=float))


def n_states(length: int, k: int) -> int:
    return math.ceil(length / k)


def init_episode(traj: PreparedTrajectory, k: int, d_h: int = 64):
    """First state (empty matched prefix, zero hiddens) and a fresh context."""
    if len(traj) == 0:
        raise EmptyTrajectory("cannot start an episode on an empty trajectory")
    if k < 1:
        raise ValueError("k must be at least 1")
    state = _slice_state(traj, 0, k, np.full(k, -1), np.zeros(d_h), np.zeros(d_h))
    return state, EpisodeContext(traj.truth)


def select_action(scores, slot_mask, cand_mask, cand_ids=None, epsilon: float = 0.0, rng=None) -> Action:
    """Per valid slot, the highest-scoring real candidate (lowest index on ties).

    With ``epsilon > 0`` and an ``rng`` each slot is replaced by a uniform
    random candidate with that probability.
    """
    scores = np.asarray(scores, dtype=float)
    k = scores.shape[0]
    idx = np.full(k, -1, dtype=np.int64)
    for n in range(k):
        if not slot_mask[n]:
            continue
        valid = np.flatnonzero(cand_mask[n])
        if valid.size == 0:
            raise NoValidCandidate(f"slot {n} has no candidates")
        if epsilon > 0 and rng is not None and rng.random() < epsilon:
            idx[n] = int(valid[rng.integers(valid.size)])
        else:
            masked = np.where(cand_mask[n], scores[n], -np.inf)
            idx[n] = int(np.argmax(masked))
    seg = np.full(k, -1, dtype=np.int64)
    if cand_ids is not None:
        seg = np.where(idx >= 0, np.asarray(cand_ids)[np.arange(k), np.maximum(idx, 0)], -1)
    return Action(idx, seg)


def compute_reward(action: Action, state: State, context: EpisodeContext, roads: LinkConnectionGraph,
                   cfg: RewardConfig = RewardConfig()):
    """Total reward over the valid slots and a per-slot breakdown.

    Updates the streak counter, history queue and predecessor in
    ``context`` slot by slot.
    """
    if context.truth is None:
        raise MissingGroundTruth("reward needs ground-truth segments")
    total, breakdown = 0.0, []
    for n in range(state.k):
        if not state.slot_mask[n]:
            continue
        a = int(action.seg_ids[n])
        pos = state.start + n
        if pos >= len(context.truth) or context.truth[pos] < 0:
            raise MissingGroundTruth(f"no ground truth for point {pos}")
        correct = a == int(context.truth[pos])
        r_ac = 1.0 if correct else -1.0
        r_cs = cfg.alpha if correct and context.streak >= cfg.theta else 0.0
        r_dp = -cfg.beta if (not correct and a in context.history) else 0.0
        r_rc = 0.0
        if context.prev_segment is not None:
            delta = connectivity_delta(context.prev_segment, a, roads, cfg.cutoff)
            r_rc = 0.0 if delta is None else cfg.gamma_rc / delta
        total += r_ac + r_cs + r_dp + r_rc
        breakdown.append((r_ac, r_cs, r_dp, r_rc))
        context.streak = context.streak + 1 if correct else 0
        context.history.pop(a, None)
        context.history[a] = True
        while len(context.history) > cfg.history_capacity:
            context.history.popitem(last=False)
        context.prev_segment = a
    return total, breakdown


def env_step(state: State, action: Action, traj: PreparedTrajectory, h_next_traj, h_next_road):
    """Next state after ``action``; returns ``(next_state, done)`` with ``None`` when done."""
    nxt = state.step_index + 1
    if nxt * state.k >= len(traj):
        return None, True
    return _slice_state(traj, nxt, state.k, action.seg_ids, h_next_traj, h_next_road), False
