"""Train the RL matcher briefly, then stream one trajectory through it.

Five epochs only, so the TD loss is still noisy and the matcher is far
below the HMM. The README explains why it stays there at this scale.

    python demos/train_and_stream.py
"""
import logging

from onlinemm.data import SynthConfig, synth_generate
from onlinemm.engine import OnlineMatcher
from onlinemm.pipeline import match_all, prepare_workspace, report
from onlinemm.rl import TrainingConfig, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

ds = synth_generate(SynthConfig(n_traj=120, seed=3, l_g=25.0))
ws = prepare_workspace(ds, seed=3, keep_rate=0.5)

cfg = TrainingConfig(seed=3, epochs=5, k=4, traj_batch_size=16, batch_size=256, updates_per_iteration=4)
res = train(ws.train, ws.val, ws.ctx, cfg)  # logs one line per epoch

preds = match_all("rlomm", ws.test, ws.roads, res.model, ws.ctx, cfg.k)
print("test AccT", round(report("rlomm", ws.test, preds).acct, 3))

# the streaming engine emits k matches every k points and keeps only two hidden vectors
traj = ws.test[0]
matcher = OnlineMatcher(res.model, ws.ctx, k=cfg.k)
emitted = []
for p in traj.points:
    emitted += matcher.step(p)
emitted += matcher.flush()
hits = sum(seg == int(traj.truth[i]) for i, seg in emitted)
print(f"streamed {len(emitted)} points, {hits} on the true segment")
