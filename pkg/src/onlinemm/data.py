"""Trajectory files, downsampling, splits, HMM labeling and a synthetic
road/trajectory generator."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonMonotoneTime, ParseError, TooSmall
from .geo import GeoPoint, GridSpec, LocalProjection, spec_from_bbox
from .roadnet import RoadSegment, read_road_csv, write_road_csv

BASE_PERIOD_S = 15


@dataclass
class LabeledTrajectory:
    id: object
    points: list
    truth: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.truth is not None and len(self.truth) != len(self.points):
            raise ValueError(f"trajectory {self.id}: {len(self.points)} points but {len(self.truth)} labels")

    def __len__(self):
        return len(self.points)


# ------------------------------------------------------------------ files


def load_trajectories(path) -> list:
    """Read ``traj_id,lat,lon,timestamp`` rows grouped by trajectory."""
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header[:4]] != ["traj_id", "lat", "lon", "timestamp"]:
            raise ParseError(f"unexpected header {header}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                tid = row[0]
                p = GeoPoint(float(row[1]), float(row[2]), int(row[3]))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), lineno) from exc
            groups.setdefault(tid, []).append(p)
    out = []
    for tid, pts in groups.items():
        if any(b.time <= a.time for a, b in zip(pts, pts[1:])):
            raise NonMonotoneTime(tid)
        out.append(LabeledTrajectory(tid, pts))
    return out


def write_trajectories(path, trajs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "lat", "lon", "timestamp"])
        for t in trajs:
            for p in t.points:
                w.writerow([t.id, f"{p.lat:.9f}", f"{p.lon:.9f}", p.time])


def write_labels(path, trajs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "point_idx", "seg_id"])
        for t in trajs:
            for i, s in enumerate(t.truth):
                w.writerow([t.id, i, s])


def load_labels(path, trajs) -> list:
    """Attach labels from ``traj_id,point_idx,seg_id`` rows to ``trajs``."""
    labels: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                labels.setdefault(row["traj_id"], {})[int(row["point_idx"])] = int(row["seg_id"])
            except (KeyError, ValueError) as exc:
                raise ParseError(str(exc), lineno) from exc
    out = []
    for t in trajs:
        got = labels.get(str(t.id), {})
        truth = [got.get(i, -1) for i in range(len(t))]
        out.append(LabeledTrajectory(t.id, t.points, truth, dict(t.meta)))
    return out


@dataclass
class Dataset:
    segments: list
    trajectories: list
    grid: GridSpec
    seed: int | None = None
    meta: dict = field(default_factory=dict)


def save_dataset(out_dir, ds: Dataset):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_road_csv(out / "roads.csv", ds.segments)
    write_trajectories(out / "trajectories.csv", ds.trajectories)
    if all(t.truth is not None for t in ds.trajectories):
        write_labels(out / "labels.csv", ds.trajectories)
    g = ds.grid
    manifest = {
        "roads": "roads.csv",
        "trajectories": "trajectories.csv",
        "labels": "labels.csv" if all(t.truth is not None for t in ds.trajectories) else None,
        "seed": ds.seed,
        "grid": {"origin_lat": g.origin.lat, "origin_lon": g.origin.lon, "l_g": g.l_g, "H": g.H, "W": g.W},
        "meta": ds.meta,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    segments = read_road_csv(d / manifest["roads"])
    trajs = load_trajectories(d / manifest["trajectories"])
    if manifest.get("labels"):
        trajs = load_labels(d / manifest["labels"], trajs)
    g = manifest["grid"]
    grid = GridSpec(GeoPoint(g["origin_lat"], g["origin_lon"]), g["l_g"], g["H"], g["W"])
    return Dataset(segments, trajs, grid, manifest.get("seed"), manifest.get("meta", {}))


# ------------------------------------------------------------------ transforms


def downsample(traj: LabeledTrajectory, keep_rate: float) -> LabeledTrajectory:
    """Keep every ``1/keep_rate``-th point starting at index 0."""
    step = round(1.0 / keep_rate)
    if step < 1 or not math.isclose(step * keep_rate, 1.0, rel_tol=1e-9):
        raise ValueError(f"keep rate must be 1/n, got {keep_rate}")
    truth = None if traj.truth is None else list(traj.truth[::step])
    return LabeledTrajectory(traj.id, list(traj.points[::step]), truth, dict(traj.meta))


def split(dataset, seed: int):
    """Shuffle and cut 70/20/10 (rounded; remainder to train)."""
    n = len(dataset)
    if n < 10:
        raise TooSmall(f"need at least 10 trajectories to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val, n_test = round(0.2 * n), round(0.1 * n)
    n_train = n - n_val - n_test
    pick = lambda idx: [dataset[i] for i in idx]  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


def hmm_label(trajs, roads, cfg=None, spec=None):
    """Replace ground truth with offline HMM (full Viterbi) labels."""
    from .baselines import HmmConfig, hmm_online_match
    from .omdp import prepare_trajectory

    cfg = cfg or HmmConfig()
    out = []
    for t in trajs:
        prep = prepare_trajectory(t, roads, spec, cfg.n_c)
        labels = hmm_online_match(prep, roads, cfg, lag=None)
        meta = dict(t.meta, labeler="hmm", labeler_sigma=cfg.sigma, labeler_beta=cfg.beta)
        out.append(LabeledTrajectory(t.id, t.points, labels, meta))
    return out


# ------------------------------------------------------------------ synthetic world


@dataclass(frozen=True)
class SynthConfig:
    style: str = "grid"  # grid | radial
    blocks: int = 4
    block_m: float = 100.0
    n_traj: int = 500
    speed_mps: float = 5.0
    period_s: int = BASE_PERIOD_S
    sigma_m: float = 15.0
    seed: int = 0
    lane_offset_m: float = 5.0
    trim_m: float = 10.0
    route_segments: tuple = (24, 40)
    margin_m: float = 100.0
    l_g: float = 5.0
    origin_lat: float = 39.9
    origin_lon: float = 116.3

    def __post_init__(self):
        if self.style not in ("grid", "radial"):
            raise ValueError(f"unknown network style {self.style!r}")
        if self.blocks < 1 or self.block_m <= 0 or self.n_traj < 0 or self.speed_mps <= 0 or self.period_s <= 0:
            raise ValueError("synthetic dimensions must be positive")
        if self.sigma_m < 0:
            raise ValueError("noise sigma must be non-negative")
        object.__setattr__(self, "route_segments", tuple(self.route_segments))


def _lane(p, q, offset, trim):
    """Right-hand lane from p to q: shifted right by ``offset``, shortened by ``trim`` at both ends."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    L = float(np.hypot(*d))
    u = d / L
    right = np.array([u[1], -u[0]])
    a = p + u * trim + right * offset
    b = q - u * trim + right * offset
    return a, b


def _grid_edges(cfg):
    n = cfg.blocks + 1
    node = lambda i, j: i * n + j  # noqa: E731
    xy = {node(i, j): (j * cfg.block_m, i * cfg.block_m) for i in range(n) for j in range(n)}
    edges = []
    for i in range(n):
        for j in range(n):
            if j + 1 < n:
                edges += [(node(i, j), node(i, j + 1)), (node(i, j + 1), node(i, j))]
            if i + 1 < n:
                edges += [(node(i, j), node(i + 1, j)), (node(i + 1, j), node(i, j))]
    return xy, edges


def _radial_edges(cfg):
    spokes, rings = max(3, 2 * cfg.blocks), cfg.blocks
    xy = {0: (0.0, 0.0)}
    node = lambda r, s: 1 + (r - 1) * spokes + s  # noqa: E731
    for r in range(1, rings + 1):
        for s in range(spokes):
            ang = 2 * math.pi * s / spokes
            xy[node(r, s)] = (r * cfg.block_m * math.cos(ang), r * cfg.block_m * math.sin(ang))
    edges = []
    for s in range(spokes):
        edges += [(0, node(1, s)), (node(1, s), 0)]
        for r in range(1, rings):
            edges += [(node(r, s), node(r + 1, s)), (node(r + 1, s), node(r, s))]
    for r in range(1, rings + 1):
        for s in range(spokes):
            a, b = node(r, s), node(r, (s + 1) % spokes)
            edges += [(a, b), (b, a)]
    return xy, edges


def synth_network(cfg: SynthConfig):
    """Directed lane segments (with node ids) and the projection used to place them."""
    xy, edges = _grid_edges(cfg) if cfg.style == "grid" else _radial_edges(cfg)
    xs = np.array([v[0] for v in xy.values()])
    ys = np.array([v[1] for v in xy.values()])
    shift = np.array([cfg.margin_m - xs.min(), cfg.margin_m - ys.min()])
    proj = LocalProjection(cfg.origin_lat, cfg.origin_lon)
    segments, lanes = [], []
    trim = min(cfg.trim_m, 0.25 * cfg.block_m)
    for sid, (a, b) in enumerate(edges):
        pa, pb = _lane(np.array(xy[a]) + shift, np.array(xy[b]) + shift, cfg.lane_offset_m, trim)
        lat, lon = proj.to_latlon([pa[0], pb[0]], [pa[1], pb[1]])
        segments.append(RoadSegment(sid, (GeoPoint(float(lat[0]), float(lon[0])), GeoPoint(float(lat[1]), float(lon[1]))), a, b))
        lanes.append((pa, pb))
    extent = (xs.max() - xs.min() + 2 * cfg.margin_m, ys.max() - ys.min() + 2 * cfg.margin_m)
    return segments, lanes, edges, proj, extent


def synth_generate(cfg: SynthConfig = SynthConfig()) -> Dataset:
    """Network plus noisy labeled trajectories from non-backtracking random walks."""
    rng = np.random.default_rng(cfg.seed)
    segments, lanes, edges, proj, (width, height) = synth_network(cfg)
    succ: dict = {}
    for sid, (a, b) in enumerate(edges):
        succ.setdefault(a, []).append(sid)
    lengths = np.array([float(np.hypot(*(q - p))) for p, q in lanes])
    max_speed = 0.999 * lengths.min() / cfg.period_s
    ne_lat, ne_lon = proj.to_latlon(width, height)
    grid = spec_from_bbox(GeoPoint(cfg.origin_lat, cfg.origin_lon), GeoPoint(float(ne_lat), float(ne_lon)), cfg.l_g)

    trajs = []
    lo, hi = cfg.route_segments
    for t in range(cfg.n_traj):
        n_seg = int(rng.integers(lo, hi + 1))
        route = [int(rng.integers(len(segments)))]
        while len(route) < n_seg:
            a, b = edges[route[-1]]
            options = [s for s in succ[b] if edges[s][1] != a] or succ[b]
            route.append(int(options[rng.integers(len(options))]))
        speed = min(cfg.speed_mps * float(rng.uniform(0.8, 1.2)), max_speed)
        cum = np.concatenate([[0.0], np.cumsum(lengths[route])])
        s = float(rng.uniform(0, lengths[route[0]]))
        step = speed * cfg.period_s
        t0 = int(rng.integers(0, 86_400))
        points, truth = [], []
        j = 0
        while s < cum[-1]:
            k = int(np.searchsorted(cum, s, side="right") - 1)
            p, q = lanes[route[k]]
            frac = (s - cum[k]) / lengths[route[k]]
            x, y = p + frac * (q - p)
            if cfg.sigma_m > 0:
                x, y = np.array([x, y]) + rng.normal(0.0, cfg.sigma_m, size=2)
            x = float(np.clip(x, 0.0, width))
            y = float(np.clip(y, 0.0, height))
            lat, lon = proj.to_latlon(x, y)
            points.append(GeoPoint(float(lat), float(lon), t0 + j * cfg.period_s))
            truth.append(route[k])
            s += step
            j += 1
        trajs.append(LabeledTrajectory(str(t), points, truth, {"speed_mps": speed}))
    return Dataset(segments, trajs, grid, cfg.seed, {"synth": _cfg_dict(cfg)})


def _cfg_dict(cfg):
    d = asdict(cfg)
    d["route_segments"] = list(cfg.route_segments)
    return d
