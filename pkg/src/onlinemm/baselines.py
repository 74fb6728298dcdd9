"""Rule-based matchers: online HMM/Viterbi, MDP value iteration, greedy
nearest segment, and exhaustive search used as a test oracle."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoCandidates, TooLarge
from .geo import haversine_m
from .roadnet import DEFAULT_CUTOFF, LinkConnectionGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HmmConfig:
    sigma: float = 20.0  # emission spread (m)
    beta: float = 50.0  # transition scale (m)
    n_c: int = 10
    cutoff: int = DEFAULT_CUTOFF

    def __post_init__(self):
        if self.sigma <= 0 or self.beta <= 0:
            raise ValueError("sigma and beta must be positive")


@dataclass(frozen=True)
class MdpConfig:
    discount: float = 0.9
    max_iter: int = 100
    tol: float = 1e-9
    sigma: float = 20.0
    bonus: float = 1.0
    cutoff: int = DEFAULT_CUTOFF

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")


def _cands(prepared, i):
    mask = prepared.cand_mask[i]
    ids = prepared.cand_ids[i][mask]
    if ids.size == 0:
        raise NoCandidates(f"point {i} has no candidate segments")
    return ids, prepared.cand_dist[i][mask]


class HmmScorer:
    """Log emission and transition terms shared by Viterbi and brute force."""

    def __init__(self, roads: LinkConnectionGraph, cfg: HmmConfig = HmmConfig()):
        self.roads = roads
        self.cfg = cfg
        self.mean_len = float(np.mean(roads.lengths))
        # straight-line gaps between a segment's end and each successor's start
        xy = roads.projection.point_xy
        self._ends = [np.array(xy(seg.end)) for seg in roads.segments]
        self._starts = [np.array(xy(seg.start)) for seg in roads.segments]
        gaps = [self._link(u, v) for u, succ in enumerate(roads.out_edges) for v in succ]
        self.mean_link = float(np.mean(gaps)) if gaps else 0.0

    def _link(self, u: int, v: int) -> float:
        return float(np.hypot(*(self._starts[v] - self._ends[u])))

    def emission(self, dist):
        return -0.5 * (np.asarray(dist, dtype=float) / self.cfg.sigma) ** 2

    def route_m(self, u: int, v: int, off_u: float | None = None, off_v: float | None = None) -> float:
        """Approximate driving distance from ``u`` to ``v``.

        Whole intermediate segments count as the mean segment length (plus
        the mean junction gap). When the offsets of the two projected points
        along ``u`` and ``v`` are given, the partial lengths on the end
        segments are exact.
        """
        hops = self.roads.hops_from(u, self.cfg.cutoff).get(v, self.cfg.cutoff + 1)
        if off_u is None or off_v is None:
            return hops * self.mean_len
        if u == v:
            return abs(off_v - off_u)
        links = self._link(u, v) if hops == 1 else hops * self.mean_link
        return (self.roads.lengths[u] - off_u) + (hops - 1) * self.mean_len + links + off_v

    def transition(self, prev_ids, cur_ids, gap_m: float, prev_xy=None, cur_xy=None):
        """Log transition matrix; pass projected points to use along-segment offsets."""
        use_xy = prev_xy is not None and cur_xy is not None
        off_p = [self.roads.offset_xy(*prev_xy, int(u)) if use_xy else None for u in prev_ids]
        off_c = [self.roads.offset_xy(*cur_xy, int(v)) if use_xy else None for v in cur_ids]
        out = np.empty((len(prev_ids), len(cur_ids)))
        for a, u in enumerate(prev_ids):
            for b, v in enumerate(cur_ids):
                out[a, b] = -abs(self.route_m(int(u), int(v), off_p[a], off_c[b]) - gap_m) / self.cfg.beta
        return out


class OnlineViterbi:
    """Incremental Viterbi over candidate lattices.

    Each :meth:`push` extends the lattice by one column and returns the
    emissions that became final: with ``lag=L`` the match for step
    ``t - L`` is emitted once step ``t`` is in, by backtracking from the
    current best candidate. ``lag=None`` defers everything to :meth:`finish`,
    which yields the exact Viterbi path.
    """

    def __init__(self, scorer: HmmScorer, lag: int | None = 1):
        self.scorer = scorer
        self.lag = lag
        self.ids: list = []
        self.back: list = []
        self.score = None
        self.prev_point = None
        self.emitted = 0

    def push(self, point, cand_ids, cand_dist):
        cand_ids = np.asarray(cand_ids)
        if cand_ids.size == 0:
            raise NoCandidates(f"point {len(self.ids)} has no candidate segments")
        em = self.scorer.emission(cand_dist)
        if self.score is None:
            self.score = em
            self.back.append(np.full(len(cand_ids), -1))
        else:
            gap = haversine_m(self.prev_point, point)
            xy = self.scorer.roads.projection.point_xy
            trans = self.scorer.transition(self.ids[-1], cand_ids, gap, xy(self.prev_point), xy(point))
            total = self.score[:, None] + trans
            best = np.argmax(total, axis=0)
            self.score = total[best, np.arange(len(cand_ids))] + em
            self.back.append(best)
        self.ids.append(cand_ids)
        self.prev_point = point
        out = []
        if self.lag is not None:
            t = len(self.ids) - 1
            while self.emitted <= t - self.lag:
                out.append((self.emitted, self._trace(self.emitted)))
                self.emitted += 1
        return out

    def _trace(self, step: int) -> int:
        j = int(np.argmax(self.score))
        for t in range(len(self.ids) - 1, step, -1):
            j = int(self.back[t][j])
        return int(self.ids[step][j])

    def path(self) -> list:
        """Best full candidate path given everything pushed so far."""
        j = int(np.argmax(self.score))
        seq = [0] * len(self.ids)
        for t in range(len(self.ids) - 1, -1, -1):
            seq[t] = int(self.ids[t][j])
            j = int(self.back[t][j])
        return seq

    def finish(self):
        if self.score is None:
            return []
        full = self.path()
        out = [(t, full[t]) for t in range(self.emitted, len(full))]
        self.emitted = len(full)
        return out


def iter_hmm_online(prepared, roads, cfg: HmmConfig = HmmConfig(), lag: int | None = 1):
    """Yield ``(point_idx, seg_id)`` emissions as points stream in."""
    vit = OnlineViterbi(HmmScorer(roads, cfg), lag)
    for i, p in enumerate(prepared.points):
        ids, dist = _cands(prepared, i)
        yield from vit.push(p, ids, dist)
    yield from vit.finish()


def hmm_online_match(prepared, roads, cfg: HmmConfig = HmmConfig(), lag: int | None = 1) -> list:
    out = [None] * len(prepared)
    for i, seg in iter_hmm_online(prepared, roads, cfg, lag):
        out[i] = seg
    return out


def hmm_path_score(prepared, roads, cfg: HmmConfig, choice) -> float:
    """Log score of one candidate-index sequence under the HMM terms."""
    scorer = HmmScorer(roads, cfg)
    total = 0.0
    for i, j in enumerate(choice):
        ids, dist = _cands(prepared, i)
        total += float(scorer.emission(dist[j]))
        if i:
            pids, _ = _cands(prepared, i - 1)
            gap = haversine_m(prepared.points[i - 1], prepared.points[i])
            xy = roads.projection.point_xy
            trans = scorer.transition([pids[choice[i - 1]]], [ids[j]], gap, xy(prepared.points[i - 1]), xy(prepared.points[i]))
            total += float(trans[0, 0])
    return total


def brute_force_best_path(prepared, scoring, limit: int = 10**6) -> list:
    """Exhaustive search over candidate-index sequences; returns segment ids.

    ``scoring(choice)`` returns the score of a tuple of candidate indices.
    The first sequence in lexicographic order wins ties.
    """
    sizes = [int(prepared.cand_mask[i].sum()) for i in range(len(prepared))]
    if any(s == 0 for s in sizes):
        raise NoCandidates("a point has no candidates")
    if math.prod(sizes) > limit:
        raise TooLarge(f"{math.prod(sizes)} sequences exceed the limit of {limit}")
    best, best_score = None, -np.inf
    for choice in itertools.product(*[range(s) for s in sizes]):
        sc = scoring(choice)
        if sc > best_score:
            best, best_score = choice, sc
    return [int(prepared.cand_ids[i][j]) for i, j in enumerate(best)]


def greedy_nearest_match(prepared, roads=None) -> list:
    """Nearest candidate per point (candidate lists are already sorted)."""
    out = []
    for i in range(len(prepared)):
        ids, _ = _cands(prepared, i)
        out.append(int(ids[0]))
    return out


class MdpMatcher:
    """Value iteration over (point index, candidate) states.

    Moving to candidate ``c'`` of the next point earns its negative scaled
    emission distance plus ``bonus / delta`` for connected segments.
    """

    def __init__(self, roads: LinkConnectionGraph, cfg: MdpConfig = MdpConfig()):
        self.roads = roads
        self.cfg = cfg
        self.converged = True

    def _rewards(self, prepared):
        cfg = self.cfg
        lists = [_cands(prepared, i) for i in range(len(prepared))]
        enter = [-(d / cfg.sigma) for _, d in lists]
        step = []
        for i in range(1, len(lists)):
            pids, cids = lists[i - 1][0], lists[i][0]
            r = np.empty((len(pids), len(cids)))
            for a, u in enumerate(pids):
                hops = self.roads.hops_from(int(u), cfg.cutoff)
                for b, v in enumerate(cids):
                    if u == v:
                        conn = cfg.bonus
                    else:
                        h = hops.get(int(v))
                        conn = 0.0 if h is None else cfg.bonus / max(1, h)
                    r[a, b] = enter[i][b] + conn
            step.append(r)
        return lists, enter, step

    def values(self, prepared):
        lists, enter, step = self._rewards(prepared)
        cfg = self.cfg
        V = [np.zeros(len(ids)) for ids, _ in lists]
        self.converged = False
        for _ in range(cfg.max_iter):
            change = 0.0
            for i in range(len(lists) - 2, -1, -1):
                new = np.max(step[i] + cfg.discount * V[i + 1][None, :], axis=1)
                change = max(change, float(np.max(np.abs(new - V[i]))))
                V[i] = new
            if change <= cfg.tol:
                self.converged = True
                break
        if not self.converged:
            log.warning("value iteration stopped after %d sweeps without converging", cfg.max_iter)
        return lists, enter, step, V

    def match(self, prepared) -> list:
        lists, enter, step, V = self.values(prepared)
        g = self.cfg.discount
        j = int(np.argmax(enter[0] + g * V[0]))
        out = [int(lists[0][0][j])]
        for i in range(1, len(lists)):
            j = int(np.argmax(step[i - 1][j] + g * V[i]))
            out.append(int(lists[i][0][j]))
        return out

    def path_score(self, prepared, choice) -> float:
        """Discounted return of a candidate-index sequence (brute-force oracle scoring)."""
        _, enter, step = self._rewards(prepared)
        g = self.cfg.discount
        total = float(enter[0][choice[0]])
        for i in range(1, len(choice)):
            total += g**i * float(step[i - 1][choice[i - 1], choice[i]])
        return total


def mdp_value_iteration_match(prepared, roads, cfg: MdpConfig = MdpConfig()) -> list:
    return MdpMatcher(roads, cfg).match(prepared)
