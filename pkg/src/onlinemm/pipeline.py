"""Glue from a dataset on disk or in memory to trained and evaluated matchers."""
from __future__ import annotations

from dataclasses import dataclass

from .baselines import HmmConfig, MdpConfig, greedy_nearest_match, hmm_online_match, mdp_value_iteration_match
from .data import Dataset, downsample, split
from .encoders import EncoderContext, MatchingModel
from .engine import rollout, snapshot_reps
from .evaluation import MatchReport
from .omdp import prepare_trajectory
from .roadnet import build_link_graph
from .trajgraph import build_mapping, build_transition_graph

# keep rate of the input stream -> points matched per step
K_FOR_RATE = {0.5: 4, 0.25: 2, 0.125: 1}


@dataclass
class Workspace:
    """Graphs, encoder context and prepared splits for one dataset."""

    dataset: Dataset
    ctx: EncoderContext
    train: list
    val: list
    test: list
    n_c: int

    @property
    def roads(self):
        return self.ctx.roads


def build_context(segments, corpus, spec) -> EncoderContext:
    roads = build_link_graph(segments)
    return EncoderContext(roads, build_transition_graph(corpus, spec), build_mapping(spec, roads))


def prepare_workspace(ds: Dataset, seed: int, keep_rate: float | None = 0.5, n_c: int = 10) -> Workspace:
    """Split, downsample and precompute candidates.

    The transition graph is built from the training split only.
    """
    trajs = ds.trajectories
    if keep_rate is not None and keep_rate != 1:
        trajs = [downsample(t, keep_rate) for t in trajs]
    tr, va, te = split(trajs, seed)
    ctx = build_context(ds.segments, tr, ds.grid)

    def prep(ts):
        return [prepare_trajectory(t, ctx.roads, ds.grid, n_c) for t in ts]

    return Workspace(ds, ctx, prep(tr), prep(va), prep(te), n_c)


def match_all(method: str, trajs, roads, model: MatchingModel | None = None, ctx=None, k: int = 4,
              hmm_cfg: HmmConfig = HmmConfig(), mdp_cfg: MdpConfig = MdpConfig()) -> list:
    """Predictions of a named matcher over prepared trajectories."""
    if method == "greedy":
        return [greedy_nearest_match(t, roads) for t in trajs]
    if method == "hmm":
        return [hmm_online_match(t, roads, hmm_cfg) for t in trajs]
    if method == "mdp":
        return [mdp_value_iteration_match(t, roads, mdp_cfg) for t in trajs]
    if method == "rlomm":
        if model is None or ctx is None:
            raise ValueError("rlomm needs a trained model and its encoder context")
        preds, _ = rollout(snapshot_reps(model, ctx), trajs, k)
        return preds
    raise ValueError(f"unknown method {method!r}")


def report(method: str, trajs, preds) -> MatchReport:
    return MatchReport.from_predictions(method, preds, [t.truth.tolist() for t in trajs])
