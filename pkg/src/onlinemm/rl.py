"""Double-DQN training with replay, Huber TD loss and InfoNCE alignment."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .encoders import EncoderContext, GlobalReps, MatchingModel, ModelConfig, encode_batch, score
from .engine import rollout, snapshot_reps
from .errors import DimensionMismatch, InsufficientExperience, NonFiniteLoss
from .evaluation import acct, lcsr
from .omdp import RewardConfig, TransitionRecord

log = logging.getLogger(__name__)

_MASK = -1e30


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    batch_size: int = 512  # transitions per update
    traj_batch_size: int = 512  # trajectories rolled out per iteration
    epochs: int = 200
    target_update: int = 10  # iterations between hard target syncs
    discount: float = 0.9
    lam: float = 0.1  # alignment loss weight
    tau: float = 0.1  # InfoNCE temperature
    k: int = 4
    epsilon: float = 0.0
    patience: int = 10
    buffer_capacity: int = 50_000
    updates_per_iteration: int = 1
    restore_best: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.lam < 0 or self.tau <= 0:
            raise ValueError("lam must be >= 0 and tau > 0")
        if self.k < 1 or self.batch_size < 1 or self.traj_batch_size < 1 or self.target_update < 1:
            raise ValueError("k, batch sizes and target interval must be >= 1")


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transition records."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._head = 0

    def __len__(self):
        return len(self._items)

    def push(self, rec: TransitionRecord):
        if len(self._items) < self.capacity:
            self._items.append(rec)
        else:
            self._items[self._head] = rec
            self._head = (self._head + 1) % self.capacity

    def contents(self) -> list:
        """Records from oldest to newest."""
        return self._items[self._head :] + self._items[: self._head]

    def sample(self, n: int, rng) -> list:
        """Uniform draw without replacement."""
        if n > len(self._items) or len(self._items) == 0:
            raise InsufficientExperience(f"asked for {n} transitions, buffer holds {len(self._items)}")
        return [self._items[i] for i in rng.choice(len(self._items), size=n, replace=False)]


@dataclass
class DualNetworks:
    main: MatchingModel
    target: MatchingModel

    @classmethod
    def create(cls, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        main = MatchingModel(cfg, seed)
        return cls(main, main.copy())


def sync_target(nets: DualNetworks) -> DualNetworks:
    nets.target.load_from(nets.main)
    return nets


# ------------------------------------------------------------------ batches


@dataclass
class TransitionBatch:
    cells: np.ndarray
    prev: np.ndarray
    cand: np.ndarray
    cand_mask: np.ndarray
    slot: np.ndarray
    h_traj: np.ndarray
    h_road: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    truth_idx: np.ndarray
    next_cells: np.ndarray
    next_prev: np.ndarray
    next_cand: np.ndarray
    next_cand_mask: np.ndarray
    next_slot: np.ndarray
    next_h_traj: np.ndarray
    next_h_road: np.ndarray

    def __len__(self):
        return len(self.reward)


def stack_records(records) -> TransitionBatch:
    def col(get):
        return np.stack([get(r) for r in records])

    def nxt(get):
        # terminal records reuse their own state; the bootstrap is masked out
        return np.stack([get(r.next_state if r.next_state is not None else r.state) for r in records])

    return TransitionBatch(
        cells=col(lambda r: r.state.cells),
        prev=col(lambda r: r.state.prev_segments),
        cand=col(lambda r: r.state.cand_ids),
        cand_mask=col(lambda r: r.state.cand_mask),
        slot=col(lambda r: r.state.slot_mask),
        h_traj=col(lambda r: r.state.hidden_traj),
        h_road=col(lambda r: r.state.hidden_road),
        action=col(lambda r: r.action.indices),
        reward=np.array([r.reward for r in records], dtype=float),
        done=np.array([r.done for r in records], dtype=bool),
        truth_idx=col(lambda r: r.truth_index),
        next_cells=nxt(lambda s: s.cells),
        next_prev=nxt(lambda s: s.prev_segments),
        next_cand=nxt(lambda s: s.cand_ids),
        next_cand_mask=nxt(lambda s: s.cand_mask),
        next_slot=nxt(lambda s: s.slot_mask),
        next_h_traj=nxt(lambda s: s.hidden_traj),
        next_h_road=nxt(lambda s: s.hidden_road),
    )


def _encode(reps, b: TransitionBatch, nxt: bool = False):
    if nxt:
        return encode_batch(reps, b.next_cells, b.next_prev, b.next_cand, b.next_h_traj, b.next_h_road, b.next_slot)
    return encode_batch(reps, b.cells, b.prev, b.cand, b.h_traj, b.h_road, b.slot)


def masked_argmax(O: np.ndarray, cand_mask: np.ndarray) -> np.ndarray:
    return np.argmax(np.where(cand_mask, O, -np.inf), axis=-1)


def q_values(O, action, slot) -> Tensor:
    """Per-transition Q: sum over valid slots of the score at the taken index."""
    n_c = O.shape[-1]
    onehot = (np.arange(n_c) == np.maximum(action, 0)[..., None]) & slot[..., None]
    return ad.tsum(O * onehot.astype(float), axis=(1, 2))


def td_targets(batch: TransitionBatch, main_reps: GlobalReps, target_reps: GlobalReps, discount: float) -> np.ndarray:
    """Double-DQN targets: next action from the main net, its value from the target net."""
    with ad.no_grad():
        enc_m = _encode(main_reps, batch, nxt=True)
        O_main = score(enc_m.E_t, enc_m.E_r, enc_m.E_C, main_reps.model).data
        best = masked_argmax(O_main, batch.next_cand_mask)
        enc_t = _encode(target_reps, batch, nxt=True)
        O_tgt = score(enc_t.E_t, enc_t.E_r, enc_t.E_C, target_reps.model).data
    value = np.take_along_axis(O_tgt, best[..., None], axis=-1)[..., 0]
    value = np.where(batch.next_slot, value, 0.0).sum(axis=1)
    return batch.reward + discount * np.where(batch.done, 0.0, value)


def huber(q, q_target) -> Tensor:
    """Mean Huber penalty with unit threshold."""
    diff = ad.sub(q, q_target)
    a = ad.tabs(diff)
    c = ad.clip_max(a, 1.0)
    return ad.mean(0.5 * c * c + (a - c))


@dataclass
class AlignmentBatch:
    anchors: Tensor  # (B, k, d)
    samples: Tensor  # (B, k, n_c, d) candidate representations
    positive: np.ndarray  # (B, k) index of the ground truth among samples, -1 = none
    sample_mask: np.ndarray  # (B, k, n_c) real candidates


def info_nce(batch: AlignmentBatch, tau: float = 0.1) -> Tensor:
    """Contrastive loss of anchors against their positive vs. the other candidates."""
    A, S = batch.anchors, batch.samples
    if A.shape[-1] != S.shape[-1]:
        raise DimensionMismatch(f"anchor width {A.shape[-1]} vs sample width {S.shape[-1]}")
    B, k, n_c = S.shape[:3]
    valid = batch.positive >= 0
    if not valid.any():
        return Tensor(0.0)
    sims = ad.tsum(S * ad.reshape(A, (B, k, 1, A.shape[-1])), axis=-1) * (1.0 / tau)
    mask = np.asarray(batch.sample_mask, dtype=bool) & valid[..., None]
    onehot = (np.arange(n_c) == np.maximum(batch.positive, 0)[..., None]) & valid[..., None]
    mask |= onehot
    # rows without a positive are zeroed below; keep them finite
    add = np.where(mask | ~valid[..., None], 0.0, _MASK)
    shift = np.max(np.where(mask | ~valid[..., None], sims.data, -np.inf), axis=-1, keepdims=True)
    lse = ad.log(ad.tsum(ad.exp(sims + (add - shift)), axis=-1)) + shift[..., 0]
    pos = ad.tsum(sims * onehot.astype(float), axis=-1)
    per_slot = (lse - pos) * valid.astype(float)
    return ad.tsum(per_slot) * (1.0 / valid.sum())


def alignment_batch(enc, truth_idx, cand_mask) -> AlignmentBatch:
    return AlignmentBatch(enc.anchors, enc.E_C, np.asarray(truth_idx), np.asarray(cand_mask, dtype=bool))


def total_loss(td, align, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lam must be >= 0")
    return td if lam == 0 else td + lam * align


# ------------------------------------------------------------------ training loop


def model_train(nets: DualNetworks, ctx: EncoderContext, buffer: ReplayBuffer, cfg: TrainingConfig, rng,
                optimizer: Adam):
    """One replay update of the main network; returns ``(td_loss, align_loss)``."""
    records = buffer.sample(min(cfg.batch_size, len(buffer)), rng)
    batch = stack_records(records)
    main_reps = GlobalReps(nets.main, ctx, training=True)
    with ad.no_grad():
        target_reps = GlobalReps(nets.target, ctx, training=False)
    q_target = td_targets(batch, main_reps, target_reps, cfg.discount)
    enc = _encode(main_reps, batch)
    O = score(enc.E_t, enc.E_r, enc.E_C, nets.main)
    td = huber(q_values(O, batch.action, batch.slot), q_target)
    align = info_nce(alignment_batch(enc, batch.truth_idx, batch.cand_mask), cfg.tau)
    loss = total_loss(td, align, cfg.lam)
    if not np.isfinite(loss.data):
        raise NonFiniteLoss(
            f"loss={loss.item()} td={td.item()} align={align.item()} "
            f"|q_target|max={np.max(np.abs(q_target)):.3g}"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return td.item(), align.item()


def evaluate_policy(model: MatchingModel, ctx: EncoderContext, trajs, k: int):
    """Greedy online predictions plus AccT and LCSR against the trajectories' truth."""
    if not trajs:
        return [], float("nan"), float("nan")
    preds, _ = rollout(snapshot_reps(model, ctx), trajs, k)
    truths = [t.truth.tolist() for t in trajs]
    return preds, acct(preds, truths), lcsr(preds, truths)


def alignment_margin(model: MatchingModel, ctx: EncoderContext, trajs) -> float:
    """Mean anchor similarity to the true segment minus mean similarity to the other candidates."""
    reps = snapshot_reps(model, ctx)
    pos, neg = [], []
    for t in trajs:
        ti = t.truth_index
        keep = ti >= 0
        if not keep.any():
            continue
        anchors = reps.grid_rows(t.cells[keep]).data
        cands = reps.road_rows(t.cand_ids[keep]).data
        sims = np.einsum("ld,lcd->lc", anchors, cands)
        hit = np.arange(sims.shape[1]) == ti[keep][:, None]
        pos.append(sims[hit])
        neg.append(sims[~hit & t.cand_mask[keep]])
    if not pos:
        return float("nan")
    return float(np.mean(np.concatenate(pos)) - np.mean(np.concatenate(neg)))


@dataclass
class TrainResult:
    model: MatchingModel
    nets: DualNetworks
    metrics: list = field(default_factory=list)
    best_epoch: int | None = None


METRIC_FIELDS = ["epoch", "td_loss", "align_loss", "val_AccT", "val_LCSR"]


def write_metrics(path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for row in metrics:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def train(train_trajs, val_trajs, ctx: EncoderContext, cfg: TrainingConfig = TrainingConfig(),
          model_cfg: ModelConfig = ModelConfig(), reward_cfg: RewardConfig = RewardConfig(),
          run_dir=None, nets: DualNetworks | None = None) -> TrainResult:
    """Alternate experience collection and replay updates for ``cfg.epochs`` epochs.

    Trajectories must be prepared (candidates + truth). Stops early when
    validation AccT has not improved for ``cfg.patience`` epochs.
    """
    rng = np.random.default_rng(cfg.seed)
    nets = nets or DualNetworks.create(model_cfg, cfg.seed)
    optimizer = Adam(nets.main.parameters(), lr=cfg.lr)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    metrics, best, best_epoch, stale = [], -math.inf, None, 0
    best_model = None
    iteration = 0
    n = len(train_trajs)
    run_dir = Path(run_dir) if run_dir else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        iters = max(1, n // cfg.traj_batch_size)
        td_hist, al_hist = [], []
        for it in range(iters):
            chunk = order[it * cfg.traj_batch_size : (it + 1) * cfg.traj_batch_size] if n >= cfg.traj_batch_size else order
            _, records = rollout(snapshot_reps(nets.main, ctx), [train_trajs[i] for i in chunk], cfg.k,
                                 ctx.roads, reward_cfg, cfg.epsilon, rng, collect=True)
            for rec in records:
                buffer.push(rec)
            for _ in range(cfg.updates_per_iteration):
                td, al = model_train(nets, ctx, buffer, cfg, rng, optimizer)
                td_hist.append(td)
                al_hist.append(al)
            iteration += 1
            if iteration % cfg.target_update == 0:
                sync_target(nets)
        _, val_acc, val_lcs = evaluate_policy(nets.main, ctx, val_trajs, cfg.k)
        row = {"epoch": epoch, "td_loss": float(np.mean(td_hist)), "align_loss": float(np.mean(al_hist)),
               "val_AccT": val_acc, "val_LCSR": val_lcs}
        metrics.append(row)
        log.info("epoch %d td=%.4f align=%.4f val_AccT=%.4f", epoch, row["td_loss"], row["align_loss"], val_acc)
        if run_dir:
            write_metrics(run_dir / "metrics.csv", metrics)
        if val_trajs:
            if val_acc > best:
                best, best_epoch, stale = val_acc, epoch, 0
                best_model = nets.main.copy()
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop after epoch %d (best %d)", epoch, best_epoch)
                    break

    model = best_model if (cfg.restore_best and best_model is not None) else nets.main
    if run_dir:
        meta = {"training_config": asdict(cfg), "best_epoch": best_epoch}
        nets.main.save(run_dir / "model_final.ckpt", meta)
        model.save(run_dir / "model.ckpt", meta)
    return TrainResult(model, nets, metrics, best_epoch)
