"""Command line entry point: ``onlinemm <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration, 3 bad data.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import functools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import HmmConfig, MdpConfig
from .data import SynthConfig, hmm_label, load_dataset, save_dataset, split, synth_generate
from .encoders import MatchingModel, ModelConfig
from .engine import OnlineMatcher, PrefixReencodingMatcher, snapshot_reps
from .errors import ConfigError, DataError, RuntimeFailure
from .evaluation import latency_harness
from .geo import GeoPoint
from .omdp import RewardConfig
from .pipeline import K_FOR_RATE, build_context, match_all, prepare_workspace, report
from .rl import TrainingConfig, train

log = logging.getLogger("onlinemm")

SECTIONS = {
    "synth": SynthConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "reward": RewardConfig,
    "hmm": HmmConfig,
    "mdp": MdpConfig,
}
TOP_LEVEL = {"seed", "keep_rate", "n_c", "method", "data", "out", "workers"}


@dataclasses.dataclass
class RunConfig:
    synth: SynthConfig = SynthConfig()
    model: ModelConfig = ModelConfig()
    training: TrainingConfig = TrainingConfig()
    reward: RewardConfig = RewardConfig()
    hmm: HmmConfig = HmmConfig()
    mdp: MdpConfig = MdpConfig()
    seed: int | None = None
    keep_rate: float = 0.5
    n_c: int = 10
    method: str = "rlomm"
    data: str | None = None
    out: str | None = None
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(SECTIONS) - TOP_LEVEL
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, typ in SECTIONS.items():
            sec = raw.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(typ)}
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            if "route_segments" in sec:
                sec = dict(sec, route_segments=tuple(sec["route_segments"]))
            try:
                kw[name] = typ(**sec)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name!r} section: {exc}") from exc
        kw.update({k: raw[k] for k in TOP_LEVEL if k in raw})
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.keep_rate not in K_FOR_RATE and self.keep_rate != 1:
            raise ConfigError(f"keep_rate must be one of {sorted(K_FOR_RATE)} or 1")
        if self.n_c < 1:
            raise ConfigError("n_c must be >= 1")
        if self.method not in ("hmm", "mdp", "greedy", "rlomm"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["synth"]["route_segments"] = list(self.synth.route_segments)
        return d


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)


def _with(cfg: RunConfig, **kw) -> RunConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    out = dataclasses.replace(cfg, **kw)
    out.validate()
    return out


def _echo(cfg: RunConfig, out_dir: Path, command: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    body = dict(cfg.to_dict(), command=command)
    (out_dir / "config.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _load(path):
    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {exc.filename}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed dataset manifest in {path}: {exc}") from exc


# ------------------------------------------------------------------ commands


def cmd_generate(args, cfg: RunConfig):
    cfg = _with(cfg, seed=args.seed)
    synth = dataclasses.replace(cfg.synth, seed=args.seed)
    cfg = dataclasses.replace(cfg, synth=synth)
    ds = synth_generate(synth)
    out = Path(args.out)
    save_dataset(out, ds)
    _echo(cfg, out, "generate")
    print(f"wrote {len(ds.trajectories)} trajectories over {len(ds.segments)} segments to {out}")


def cmd_label(args, cfg: RunConfig):
    ds = _load(args.data)
    from .roadnet import build_link_graph

    roads = build_link_graph(ds.segments)
    ds.trajectories = hmm_label(ds.trajectories, roads, cfg.hmm, ds.grid)
    ds.meta = dict(ds.meta, labeler="hmm")
    save_dataset(args.out, ds)
    _echo(cfg, Path(args.out), "label")
    print(f"labeled {len(ds.trajectories)} trajectories into {args.out}")


def cmd_split(args, cfg: RunConfig):
    cfg = _with(cfg, seed=args.seed)
    ds = _load(args.data)
    parts = split(ds.trajectories, cfg.seed if cfg.seed is not None else 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = {name: [t.id for t in part] for name, part in zip(("train", "val", "test"), parts)}
    (out / "split.json").write_text(json.dumps(ids, indent=2) + "\n")
    _echo(cfg, out, "split")
    print(" ".join(f"{k}={len(v)}" for k, v in ids.items()))


def cmd_train(args, cfg: RunConfig):
    cfg = _with(cfg, seed=args.seed, data=str(args.data), out=str(args.out))
    cfg = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, seed=args.seed, k=K_FOR_RATE.get(cfg.keep_rate, cfg.training.k)))
    ds = _load(args.data)
    out = Path(args.out)
    _echo(cfg, out, "train")
    ws = prepare_workspace(ds, cfg.seed, cfg.keep_rate, cfg.n_c)
    res = train(ws.train, ws.val, ws.ctx, cfg.training, cfg.model, cfg.reward, run_dir=out)
    last = res.metrics[-1] if res.metrics else {}
    print(f"trained {len(res.metrics)} epochs; best epoch {res.best_epoch}; last {last}")


def _run_dir_config(model_dir) -> RunConfig:
    path = Path(model_dir) / "config.json"
    if not path.exists():
        raise DataError(f"no config.json in run directory {model_dir}")
    raw = json.loads(path.read_text())
    raw.pop("command", None)
    return RunConfig.from_dict(raw)


def _model_and_context(model_dir, data_dir=None):
    run_cfg = _run_dir_config(model_dir)
    ds = _load(data_dir or run_cfg.data)
    ckpt = Path(model_dir) / "model.ckpt"
    if not ckpt.exists():
        raise DataError(f"no checkpoint in {model_dir}")
    try:
        model = MatchingModel.load(ckpt)
    except (KeyError, ValueError) as exc:
        raise RuntimeFailure(f"cannot load checkpoint {ckpt}: {exc}") from exc
    return run_cfg, ds, model


def cmd_match(args, cfg: RunConfig):
    run_cfg, ds, model = _model_and_context(args.model, args.data)
    ws_trajs = ds.trajectories
    from .data import downsample

    if run_cfg.keep_rate != 1:
        ws_trajs = [downsample(t, run_cfg.keep_rate) for t in ws_trajs]
    train_part, _, _ = split(ws_trajs, run_cfg.seed)
    ctx = build_context(ds.segments, train_part, ds.grid)
    matcher = OnlineMatcher(model, ctx, run_cfg.training.k, run_cfg.n_c)
    out = sys.stdout
    for lineno, line in enumerate(sys.stdin, start=1):
        line = line.strip()
        if not line or line.startswith(("lat", "traj_id")):
            continue
        parts = line.split(",")
        try:
            vals = [float(v) for v in parts[-3:]] if len(parts) >= 3 else [float(v) for v in parts]
            lat, lon = vals[0], vals[1]
            ts = vals[2] if len(vals) > 2 else 0.0
            point = GeoPoint(lat, lon, ts)
        except (ValueError, IndexError) as exc:
            raise DataError(f"stdin line {lineno}: cannot parse point {line!r}") from exc
        for idx, seg in matcher.step(point):
            out.write(f"{idx},{seg}\n")
        out.flush()
    for idx, seg in matcher.flush():
        out.write(f"{idx},{seg}\n")
    out.flush()


def _parallel(method, trajs, roads, cfg: RunConfig):
    if cfg.workers <= 1 or method == "rlomm":
        return match_all(method, trajs, roads, hmm_cfg=cfg.hmm, mdp_cfg=cfg.mdp)
    chunks = [trajs[i :: cfg.workers] for i in range(cfg.workers)]
    job = functools.partial(match_all, method, roads=roads, hmm_cfg=cfg.hmm, mdp_cfg=cfg.mdp)
    with ProcessPoolExecutor(cfg.workers) as pool:
        parts = list(pool.map(job, chunks))
    out = [None] * len(trajs)
    for i, part in enumerate(parts):
        out[i :: cfg.workers] = part
    return out


def cmd_eval(args, cfg: RunConfig):
    method = args.method or cfg.method
    if method == "rlomm":
        if not args.model:
            raise ConfigError("--model is required for --method rlomm")
        run_cfg, ds, model = _model_and_context(args.model, args.data)
        cfg = dataclasses.replace(run_cfg, workers=cfg.workers)
    else:
        ds, model = _load(args.data), None
    cfg = _with(cfg, method=method, seed=args.seed)
    seed = cfg.seed if cfg.seed is not None else 0
    ws = prepare_workspace(ds, seed, cfg.keep_rate, cfg.n_c)
    if method == "rlomm":
        preds = match_all("rlomm", ws.test, ws.roads, model, ws.ctx, K_FOR_RATE.get(cfg.keep_rate, cfg.training.k))
    else:
        preds = _parallel(method, ws.test, ws.roads, cfg)
    rep = report(method, ws.test, preds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.to_json() + "\n")
    print(rep.table())


def cmd_bench(args, cfg: RunConfig):
    run_cfg, ds, model = _model_and_context(args.model, args.data)
    from .data import downsample

    trajs = ds.trajectories
    train_part, _, test = split(trajs, run_cfg.seed)
    ctx = build_context(ds.segments, [downsample(t, run_cfg.keep_rate) for t in train_part], ds.grid)
    # a long stream: concatenated test trajectories, points re-timed to stay monotone
    stream = [GeoPoint(p.lat, p.lon, i) for i, p in enumerate(q for t in test for q in t.points)][: args.steps]
    reps = snapshot_reps(model, ctx)
    k = args.k
    results = {}
    rows = {}
    for name, cls in (("rlomm", OnlineMatcher), ("prefix_reencoding", PrefixReencodingMatcher)):
        rep = latency_harness(lambda: cls(model, ctx, k, run_cfg.n_c, reps=reps), stream, args.warmup, args.repeats)
        results[name] = {"ratio": rep.ratio, "median_10_20_ns": rep.window_median(10, 20),
                         "median_90_100_ns": rep.window_median(90, 100)}
        rows[name] = rep.per_step_ns
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "latency.json").write_text(json.dumps(results, indent=2) + "\n")
    with open(out / "latency.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + list(rows))
        for i in range(len(stream)):
            w.writerow([i + 1] + [int(rows[n][i]) for n in rows])
    for name, r in results.items():
        print(f"{name:>18}: latency ratio {r['ratio']:.2f}")


# ------------------------------------------------------------------ parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onlinemm", description="Online map matching with reinforcement learning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, fn):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--workers", type=int, default=None, help="per-trajectory worker processes")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("generate", "synthesize a road network and labeled trajectories", cmd_generate)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)

    sp = add("label", "relabel trajectories with offline HMM matching", cmd_label)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("split", "write a seeded 70/20/10 split of trajectory ids", cmd_split)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)

    sp = add("train", "train the RL matcher", cmd_train)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)

    sp = add("match", "stream points from stdin, print point_idx,seg_id", cmd_match)
    sp.add_argument("--model", required=True, help="training run directory")
    sp.add_argument("--data", default=None, help="dataset (defaults to the one used for training)")

    sp = add("eval", "evaluate a matcher on the test split", cmd_eval)
    sp.add_argument("--method", choices=["hmm", "mdp", "greedy", "rlomm"], default=None)
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", default=None, help="training run directory (rlomm)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)

    sp = add("bench", "per-step latency of the streaming matcher vs prefix re-encoding", cmd_bench)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--repeats", type=int, default=5)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            cfg = _with(cfg, workers=args.workers)
        args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except RuntimeFailure as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
