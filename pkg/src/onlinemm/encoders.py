"""Road encoder (GIN), trajectory encoder (GCN), recurrent sequence
encoders and the attention scorer.

All learnable weights live in :class:`MatchingModel`; the forward
functions take the model plus precomputed graph operators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import MissingCandidate, ShapeMismatch
from .roadnet import LinkConnectionGraph, segment_features
from .trajgraph import RoadToGridMapping, TrajectoryTransitionGraph

N_ROAD_FEATURES = 8


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 64
    d_a: int = 32
    n_gin: int = 3
    n_gcn: int = 3
    bn_momentum: float = 0.1
    gin_normalize: bool = True  # divide GIN aggregates by 1 + max degree

    def __post_init__(self):
        if min(self.d_h, self.d_a) < 1 or min(self.n_gin, self.n_gcn) < 0:
            raise ValueError(f"invalid model widths/depths: {self}")


class MatchingModel:
    """Parameters of the road, trajectory and scoring modules.

    One hidden width ``d_h`` is shared by road and grid representations
    and by the recurrent cells, so anchors and candidate embeddings can be
    compared with inner products.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, da = cfg.d_h, cfg.d_a
        p = {}

        def normal(name, fan_in, shape):
            p[name] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), requires_grad=True, name=name)

        def zeros(name, shape):
            p[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

        normal("lift.W", N_ROAD_FEATURES, (N_ROAD_FEATURES, d))
        zeros("lift.b", (d,))
        for n in range(cfg.n_gin):
            normal(f"gin.{n}.W1", d, (d, d))
            zeros(f"gin.{n}.b1", (d,))
            normal(f"gin.{n}.W2", d, (d, d))
            zeros(f"gin.{n}.b2", (d,))
            zeros(f"gin.{n}.eps", ())
        for n in range(cfg.n_gcn):
            normal(f"gcn.{n}.Wa", d, (d, d))
            normal(f"gcn.{n}.Wb", d, (d, d))
            p[f"gcn.{n}.gamma"] = Tensor(np.ones(d), requires_grad=True, name=f"gcn.{n}.gamma")
            zeros(f"gcn.{n}.beta", (d,))
        for side in ("rnn_t", "rnn_r"):
            normal(f"{side}.Wh", d, (d, d))
            normal(f"{side}.Wz", d, (d, d))
            normal(f"{side}.We", d, (d, d))
            zeros(f"{side}.bh", (d,))
            zeros(f"{side}.bz", (d,))
            zeros(f"{side}.be", (d,))
        normal("attn.WF", 2 * d, (2 * d, da))
        zeros("attn.bF", (da,))
        normal("attn.WC", d, (d, da))
        zeros("attn.bC", (da,))
        self.params = p
        self.bn = [BatchNormState(d, cfg.bn_momentum) for _ in range(cfg.n_gcn)]

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def copy(self) -> "MatchingModel":
        other = MatchingModel.__new__(MatchingModel)
        other.cfg = self.cfg
        other.params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        other.bn = [s.copy() for s in self.bn]
        return other

    def load_from(self, other: "MatchingModel"):
        """Hard copy of weights and normalization statistics."""
        for k, v in other.params.items():
            self.params[k].data[...] = v.data
        for mine, theirs in zip(self.bn, other.bn):
            mine.mean = theirs.mean.copy()
            mine.var = theirs.var.copy()

    def state_arrays(self) -> dict:
        arrays = {k: v.data for k, v in self.params.items()}
        for n, s in enumerate(self.bn):
            arrays[f"gcn.{n}.running_mean"] = s.mean
            arrays[f"gcn.{n}.running_var"] = s.var
        return arrays

    def load_arrays(self, arrays: dict):
        for k, v in self.params.items():
            if arrays[k].shape != v.shape:
                raise ShapeMismatch(f"{k}: checkpoint {arrays[k].shape} vs model {v.shape}")
            v.data[...] = arrays[k]
        for n, s in enumerate(self.bn):
            s.mean = arrays[f"gcn.{n}.running_mean"].copy()
            s.var = arrays[f"gcn.{n}.running_var"].copy()

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta["model_config"] = self.cfg.__dict__
        ad.save_checkpoint(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> "MatchingModel":
        arrays, meta = ad.load_checkpoint(path)
        model = cls(ModelConfig(**meta["model_config"]))
        model.load_arrays(arrays)
        return model


# ------------------------------------------------------------ graph encoders


def undirected_adjacency(graph: LinkConnectionGraph) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency of in- and out-neighbors (no self loops)."""
    n = len(graph)
    rows, cols = [], []
    for i, succ in enumerate(graph.out_edges):
        for j in succ:
            if i != j:
                rows += [i, j]
                cols += [j, i]
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    m.data[:] = 1.0  # duplicates from two-way streets collapse to 1
    return m


def aggregate_scale(adjacency) -> float:
    """1 / (1 + max degree): keeps summed neighborhoods at unit scale.

    A constant factor in front of the first affine map of the MLP, so the
    layer's function class (and sum-injectivity) is unchanged.
    """
    deg = np.asarray(adjacency.sum(axis=1)).ravel()
    return 1.0 / (1.0 + (deg.max() if deg.size else 0.0))


def gin_forward(features, adjacency, model: MatchingModel) -> Tensor:
    """Lift raw segment features to d_h, then apply each GIN layer."""
    z = ad.matmul(features, model["lift.W"]) + model["lift.b"]
    scale = aggregate_scale(adjacency) if model.cfg.gin_normalize else 1.0
    for n in range(model.cfg.n_gin):
        z = gin_layer(z, adjacency, model, n, scale)
    return z


def gin_layer(z, adjacency, model: MatchingModel, n: int, scale: float = 1.0) -> Tensor:
    agg = ((1.0 + model[f"gin.{n}.eps"]) * z + ad.spmm(adjacency, z)) * scale
    hidden = ad.relu(ad.matmul(agg, model[f"gin.{n}.W1"]) + model[f"gin.{n}.b1"])
    return ad.matmul(hidden, model[f"gin.{n}.W2"]) + model[f"gin.{n}.b2"]


def gcn_layer(z, adjacency, model: MatchingModel, n: int, training: bool) -> Tensor:
    pre = ad.matmul(z, model[f"gcn.{n}.Wa"]) + ad.spmm(adjacency, ad.matmul(z, model[f"gcn.{n}.Wb"]))
    return ad.relu(ad.batch_norm(pre, model[f"gcn.{n}.gamma"], model[f"gcn.{n}.beta"], model.bn[n], training))


def gcn_forward(z0, adjacency, model: MatchingModel, training: bool = False) -> Tensor:
    z = z0
    for n in range(model.cfg.n_gcn):
        z = gcn_layer(z, adjacency, model, n, training)
    return z


def isolated_gcn(z0, model: MatchingModel) -> Tensor:
    """GCN output for cells outside the transition graph (no neighbors, eval statistics)."""
    z = z0
    for n in range(model.cfg.n_gcn):
        pre = ad.matmul(z, model[f"gcn.{n}.Wa"])
        z = ad.relu(ad.batch_norm(pre, model[f"gcn.{n}.gamma"], model[f"gcn.{n}.beta"], model.bn[n], False))
    return z


# ------------------------------------------------------------ recurrent + scorer


def rnn_step(h_prev, z, model: MatchingModel, side: str):
    """One tanh cell update; returns (hidden, output)."""
    h = ad.tanh(
        ad.matmul(h_prev, model[f"{side}.Wh"]) + model[f"{side}.bh"] + ad.matmul(z, model[f"{side}.Wz"]) + model[f"{side}.bz"]
    )
    e = ad.matmul(h, model[f"{side}.We"]) + model[f"{side}.be"]
    return h, e


def rnn_sequence(h0, inputs, mask, model: MatchingModel, side: str):
    """Run ``k`` steps over inputs (B, k, d) from h0 (B, d).

    Masked slots leave the hidden state untouched. Returns outputs
    (B, k, d) and the final hidden state.
    """
    h0, inputs = ad.as_tensor(h0), ad.as_tensor(inputs)
    if h0.ndim != 2 or inputs.ndim != 3 or inputs.shape[0] != h0.shape[0]:
        raise ShapeMismatch(f"rnn shapes: h0 {h0.shape}, inputs {inputs.shape}")
    k = inputs.shape[1]
    mask = np.ones(inputs.shape[:2]) if mask is None else np.asarray(mask, dtype=float)
    h, outs = h0, []
    for n in range(k):
        h_new, e = rnn_step(h, inputs[:, n, :], model, side)
        m = mask[:, n : n + 1]
        h = h_new if m.all() else h_new * m + h * (1.0 - m)
        outs.append(ad.reshape(e, (e.shape[0], 1, e.shape[1])))
    return ad.concat(outs, axis=1), h


def score(E_t, E_r, E_C, model: MatchingModel) -> Tensor:
    """Attention scores (B, k, n_c) between fused step embeddings and candidates."""
    fused = ad.concat([E_t, E_r], axis=-1)
    if fused.shape[-1] != model["attn.WF"].shape[0] or E_C.shape[-1] != model["attn.WC"].shape[0]:
        raise ShapeMismatch(f"scorer widths: fused {fused.shape}, candidates {E_C.shape}")
    q = ad.tanh(ad.matmul(fused, model["attn.WF"]) + model["attn.bF"])
    keys = ad.tanh(ad.matmul(E_C, model["attn.WC"]) + model["attn.bC"])
    b, k, da = q.shape
    return ad.tsum(keys * ad.reshape(q, (b, k, 1, da)), axis=-1)


# ------------------------------------------------------------ global context


class EncoderContext:
    """Fixed graph operators shared by every forward pass."""

    def __init__(self, roads: LinkConnectionGraph, tgraph: TrajectoryTransitionGraph, mapping: RoadToGridMapping):
        self.roads = roads
        self.tgraph = tgraph
        self.mapping = mapping
        self.spec = tgraph.spec
        self.features = segment_features(roads, tgraph.spec)
        self.road_adj = undirected_adjacency(roads)
        self.grid_adj = tgraph.normalized_in_adjacency()
        self.grid_map = mapping.matrix(tgraph.cells)


class GlobalReps:
    """Road and grid representations for one parameter snapshot."""

    def __init__(self, model: MatchingModel, ctx: EncoderContext, training: bool = False):
        self.model = model
        self.ctx = ctx
        self.road = gin_forward(ctx.features, ctx.road_adj, model)
        z0 = ad.spmm(ctx.grid_map, self.road)
        self.grid = gcn_forward(z0, ctx.grid_adj, model, training) if len(ctx.tgraph) else z0
        d = model.cfg.d_h
        self._road_ext = ad.concat([self.road, Tensor(np.zeros((1, d)))], axis=0)
        self._extra: dict = {}

    def road_rows(self, seg_ids) -> Tensor:
        """Rows of road representations; id -1 yields the zero placeholder."""
        return ad.gather(self._road_ext, np.where(np.asarray(seg_ids) < 0, len(self.ctx.roads), seg_ids))

    def grid_rows(self, flat_cells) -> Tensor:
        flat_cells = np.asarray(flat_cells, dtype=np.int64)
        node_of = self.ctx.tgraph.node_of
        n = len(node_of)
        unknown = sorted({c for c in flat_cells.ravel().tolist() if c not in node_of and c not in self._extra})
        if unknown:
            z0 = ad.spmm(self.ctx.mapping.matrix(unknown), self.road)
            rows = isolated_gcn(z0, self.model)
            for i, c in enumerate(unknown):
                self._extra[c] = rows[i : i + 1, :]
        extra_cells = sorted(self._extra)
        if any(c in self._extra for c in flat_cells.ravel().tolist()):
            table = ad.concat([self.grid] + [self._extra[c] for c in extra_cells], axis=0)
            where = {c: n + i for i, c in enumerate(extra_cells)}
        else:
            table, where = self.grid, {}
        idx = np.vectorize(lambda c: node_of[c] if c in node_of else where[c], otypes=[np.int64])(flat_cells) \
            if flat_cells.size else flat_cells
        return ad.gather(table, idx)


@dataclass
class Encoded:
    E_t: Tensor
    E_r: Tensor
    E_C: Tensor
    h_traj: Tensor
    h_road: Tensor
    anchors: Tensor


def encode_batch(reps: GlobalReps, cells, prev_segments, cand_ids, h_traj, h_road, slot_mask=None) -> Encoded:
    """Encode a batch of states.

    cells (B, k) flat grid cells of the current points; prev_segments
    (B, k) previously matched ids (-1 = empty prefix); cand_ids (B, k, n_c);
    hidden states (B, d_h).
    """
    cells = np.asarray(cells)
    cand_ids = np.asarray(cand_ids)
    if cand_ids.ndim != 3 or cand_ids.shape[:2] != cells.shape:
        raise MissingCandidate(f"candidate array {cand_ids.shape} does not cover points {cells.shape}")
    anchors = reps.grid_rows(cells)
    road_in = reps.road_rows(prev_segments)
    E_C = reps.road_rows(cand_ids)
    E_t, h_t = rnn_sequence(h_traj, anchors, slot_mask, reps.model, "rnn_t")
    E_r, h_r = rnn_sequence(h_road, road_in, None, reps.model, "rnn_r")
    return Encoded(E_t, E_r, E_C, h_t, h_r, anchors)


def encode_state(state, reps: GlobalReps) -> Encoded:
    """Encode a single OMDP state (batch of one)."""
    return encode_batch(
        reps,
        state.cells[None, :],
        state.prev_segments[None, :],
        state.cand_ids[None, :, :],
        state.hidden_traj[None, :],
        state.hidden_road[None, :],
        state.slot_mask[None, :],
    )
