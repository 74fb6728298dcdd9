"""Accuracy metrics and the per-step latency harness."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import LengthMismatch


def _check(preds, truths):
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions for {len(truths)} trajectories")
    for i, (p, t) in enumerate(zip(preds, truths)):
        if len(p) != len(t):
            raise LengthMismatch(f"trajectory {i}: {len(p)} predictions for {len(t)} points")


def acct_per_traj(preds, truths) -> list:
    _check(preds, truths)
    return [float(np.mean(np.asarray(p) == np.asarray(t))) if len(t) else 1.0 for p, t in zip(preds, truths)]


def acct(preds, truths) -> float:
    """Mean over trajectories of the fraction of exactly matched positions."""
    vals = acct_per_traj(preds, truths)
    return float(np.mean(vals)) if vals else 0.0


def lcs_length(a, b) -> int:
    """Longest common subsequence length by dynamic programming."""
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def lcsr_per_traj(preds, truths) -> list:
    _check(preds, truths)
    return [lcs_length(list(p), list(t)) / len(t) if len(t) else 1.0 for p, t in zip(preds, truths)]


def lcsr(preds, truths) -> float:
    vals = lcsr_per_traj(preds, truths)
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class MatchReport:
    method: str
    acct: float
    lcsr: float
    per_traj_acct: list = field(default_factory=list)
    per_traj_lcsr: list = field(default_factory=list)
    latency_ns: list = field(default_factory=list)
    peak_memory_bytes: int | None = None

    @classmethod
    def from_predictions(cls, method, preds, truths, **extra):
        a = acct_per_traj(preds, truths)
        l = lcsr_per_traj(preds, truths)
        return cls(method, float(np.mean(a)) if a else 0.0, float(np.mean(l)) if l else 0.0, a, l, **extra)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        lines = [f"{'method':<10} {'AccT':>8} {'LCSR':>8} {'n':>6}",
                 f"{self.method:<10} {self.acct:>8.4f} {self.lcsr:>8.4f} {len(self.per_traj_acct):>6d}"]
        if self.latency_ns:
            lines.append(f"median step latency: {np.median(self.latency_ns) / 1e3:.1f} us")
        return "\n".join(lines)


@dataclass
class LatencyReport:
    samples_ns: np.ndarray  # (repeats, steps)
    warmup: int

    @property
    def per_step_ns(self) -> np.ndarray:
        """Median over repeats at each step position."""
        return np.median(self.samples_ns, axis=0)

    def window_median(self, lo: int, hi: int) -> float:
        """Median per-step time over 1-based steps ``lo..hi`` inclusive (nan if the stream is shorter)."""
        window = self.per_step_ns[lo - 1 : hi]
        return float(np.median(window)) if window.size else float("nan")

    @property
    def ratio(self) -> float:
        return self.window_median(90, 100) / self.window_median(10, 20)


def latency_harness(make_matcher, stream, warmup: int = 5, repeats: int = 5) -> LatencyReport:
    """Time each ``step`` call of a fresh matcher over ``stream``.

    ``make_matcher()`` returns an object with ``step(item)``. Each repeat
    first runs ``warmup`` untimed steps on a throwaway matcher, then times
    every step of a fresh one.
    """
    stream = list(stream)
    rows = []
    for _ in range(repeats):
        if warmup:
            m = make_matcher()
            for item in stream[:warmup]:
                m.step(item)
        m = make_matcher()
        times = np.empty(len(stream), dtype=np.int64)
        for i, item in enumerate(stream):
            t0 = time.perf_counter_ns()
            m.step(item)
            times[i] = time.perf_counter_ns() - t0
        rows.append(times)
    return LatencyReport(np.array(rows), warmup)
