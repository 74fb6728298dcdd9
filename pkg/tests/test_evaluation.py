import json
import time

import numpy as np
import pytest

from onlinemm.errors import LengthMismatch
from onlinemm.evaluation import MatchReport, acct, latency_harness, lcs_length, lcsr

from suites import lcs_vs_enumeration


def test_acct_examples():
    assert acct([[1, 2, 3]], [[1, 2, 3]]) == 1.0
    assert acct([[1, 9, 3, 9]], [[1, 2, 3, 4]]) == 0.5
    assert acct([[1, 2], [1, 9]], [[1, 2], [1, 2]]) == 0.75
    with pytest.raises(LengthMismatch):
        acct([[1, 2]], [[1]])
    with pytest.raises(LengthMismatch):
        acct([[1]], [[1], [2]])


def test_lcsr_examples():
    assert lcsr([["a", "x", "c"]], [["a", "b", "c"]]) == pytest.approx(2 / 3)
    assert lcsr([[4, 5]], [[4, 5]]) == 1.0
    assert lcs_length([], [1, 2]) == 0


def test_lcs_matches_enumeration():
    assert lcs_vs_enumeration(np.random.default_rng(2), 200) == 0


def test_acct_is_one_only_for_identical(rng):
    for _ in range(200):
        t = rng.integers(0, 3, size=int(rng.integers(1, 6))).tolist()
        p = rng.integers(0, 3, size=len(t)).tolist()
        assert (acct([p], [t]) == 1.0) == (p == t)


def test_report_json_and_table():
    rep = MatchReport.from_predictions("hmm", [[1, 2], [3, 3]], [[1, 2], [3, 4]], latency_ns=[1000, 3000])
    d = json.loads(rep.to_json())
    assert d["acct"] == 0.75 and d["per_traj_acct"] == [1.0, 0.5]
    assert "hmm" in rep.table() and "latency" in rep.table()


class Constant:
    def step(self, item):
        return sum(range(2000))


class Prefix:
    """Re-reads everything seen so far on each step."""

    def __init__(self):
        self.seen = []

    def step(self, item):
        self.seen.append(item)
        return sum(sum(range(300)) for _ in self.seen)


def test_latency_controls():
    flat = latency_harness(Constant, range(100), warmup=5, repeats=5)
    assert flat.samples_ns.shape == (5, 100)
    assert flat.ratio < 1.2
    grows = latency_harness(Prefix, range(100), warmup=5, repeats=3)
    assert grows.ratio > 3
    assert grows.window_median(1, 100) > 0
