"""Multicast feedback simulation.

At each prediction time ``t + kappa`` the server has the FoVs of ``N``
feedback users up to time ``t`` only (uplink delay).  Their heatmaps over the
last ``seq_len`` feedback frames are summed, fed to the FoV predictor, fused
with saliency of the frame at ``t + kappa`` and scored against the held-out
users' viewing at ``t + kappa``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from .. import numerics as nx
from ..evalkit import DEFAULT_TILES, UndefinedMetricError, auc_judd, cc, nss, tile_metrics, weighted_mse
from ..fovgru import aggregate_user_fovs
from ..fusion import DEFAULT_REGIONS, fuse
from ..saliency import motion_input
from .synthetic import Scene, fixation_pixels

DEFAULT_INTERVALS = (0.03, 0.5, 1.0, 1.5, 2.0)


@dataclass
class SessionConfig:
    population: int = 20
    n_feedback: int = 5
    interval: float = 0.03  # kappa, seconds
    intervals: tuple[float, ...] = DEFAULT_INTERVALS
    grid: tuple[int, int] = (64, 128)
    tiles: tuple[int, int] = DEFAULT_TILES
    regions: tuple[int, int] = DEFAULT_REGIONS
    seed: int = 0
    motion_mode: str = "frames"
    include_feedback: bool = False
    seq_len: int = 3
    horizon: float = 2.0  # evaluation starts once the longest interval has history
    frame_stride: int = 1
    aggregation: str = "sum"

    def __post_init__(self):
        if not 0 <= self.n_feedback <= self.population:
            raise ValueError(f"need 0 <= N <= population, got N={self.n_feedback}, population={self.population}")
        if not self.interval > 0 or any(not k > 0 for k in self.intervals):
            raise ValueError("prediction intervals must be positive")
        if self.seq_len < 1 or self.frame_stride < 1:
            raise ValueError("seq_len and frame_stride must be >= 1")

    def offset_frames(self, fps: float, interval: float | None = None) -> int:
        return int(round((self.interval if interval is None else interval) * fps))

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_strings(cls, values: dict[str, str], base: "SessionConfig | None" = None) -> "SessionConfig":
        """Build from ``key=value`` strings (config file plus overrides)."""
        base = base or cls()
        kinds = {f.name: f for f in fields(cls)}
        kw = asdict(base)
        for k, v in values.items():
            if k not in kinds:
                raise KeyError(f"unknown session setting {k!r}")
            cur = kw[k]
            if isinstance(cur, bool):
                kw[k] = v.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(cur, tuple):
                parts = [p for p in v.replace("x", ",").split(",") if p.strip()]
                conv = float if k == "intervals" else int
                kw[k] = tuple(conv(p) for p in parts)
            elif isinstance(cur, int):
                kw[k] = int(v)
            elif isinstance(cur, float):
                kw[k] = float(v)
            else:
                kw[k] = v.strip()
        return cls(**kw)


def select_feedback_users(population: int, n: int, seed: int) -> list[int]:
    """Seeded sample without replacement; sets are nested in ``n`` for a fixed seed."""
    if not 0 <= n <= population:
        raise ValueError(f"cannot pick {n} feedback users from {population}")
    perm = np.random.default_rng(seed).permutation(population)
    return sorted(int(u) for u in perm[:n])


@dataclass
class SessionResult:
    config: SessionConfig
    offset: int
    feedback_users: list[int]
    eval_users: list[int]
    records: list[dict] = field(default_factory=list)
    predictions: dict[int, np.ndarray] = field(default_factory=dict)

    def mean(self, key: str) -> float:
        vals = np.array([r[key] for r in self.records], dtype=float)
        return float(np.nanmean(vals)) if vals.size and not np.all(np.isnan(vals)) else math.nan


def feedback_sequence(scene: Scene, users: list[int], t: int, seq_len: int,
                      aggregation: str = "sum", read_log: list | None = None) -> np.ndarray:
    """Aggregated feedback heatmaps for frames ``t - seq_len + 1 .. t`` as [T, H, W].

    Each user's sample is looked up by time, so nothing after frame ``t`` can
    be read; ``read_log`` collects the sample times actually used.
    """
    if t - seq_len + 1 < 0:
        raise ValueError(f"frame {t} has fewer than {seq_len} frames of history")
    out = []
    for f in range(t - seq_len + 1, t + 1):
        maps = []
        for u in users:
            if read_log is not None:
                read_log.append(scene.traces[u].times[scene.sample_index(u, f)])
            maps.append(scene.user_heatmap(u, f))
        out.append(aggregate_user_fovs(maps, scene.grid, aggregation))
    return np.stack(out)


def ground_truth(scene: Scene, users: list[int], frame: int) -> np.ndarray:
    """Viewing density of ``users`` at ``frame``: summed FoV heatmaps scaled to peak 1."""
    g = aggregate_user_fovs([scene.user_heatmap(u, frame) for u in users], scene.grid)
    m = g.max()
    return g / m if m > 0 else g


def _undefined(fn, *args) -> float:
    try:
        return float(fn(*args))
    except UndefinedMetricError:
        return math.nan


def score(pred: np.ndarray, gt: np.ndarray, fixations, tiles=DEFAULT_TILES) -> dict:
    try:
        acc, prec, rec = tile_metrics(pred, gt, tiles)
    except UndefinedMetricError:
        acc = prec = rec = math.nan
    return {
        "accuracy": acc, "precision": prec, "recall": rec,
        "nss": _undefined(nss, pred, fixations) if fixations else math.nan,
        "cc": _undefined(cc, pred, gt),
        "auc": _undefined(auc_judd, pred, fixations) if fixations else math.nan,
        "loss": float(weighted_mse(pred, gt)),
    }


class SaliencyCache:
    """Eval-mode saliency maps per frame, computed once and reused across runs."""

    def __init__(self, net, scene: Scene, motion_mode: str = "frames"):
        self.net, self.scene, self.mode = net, scene, motion_mode
        self.maps: dict[int, np.ndarray] = {}

    def __call__(self, frame: int) -> np.ndarray:
        if frame not in self.maps:
            f = nx.as_tensor(self.scene.frames[frame])
            prev = nx.as_tensor(self.scene.frames[max(frame - 1, 0)])
            self.net.eval()
            with torch.no_grad():
                self.maps[frame] = self.net(f, motion_input(prev, f, self.mode)).numpy()
        return self.maps[frame]


def evaluation_frames(scene: Scene, cfg: SessionConfig) -> list[int]:
    """Target frames shared by every interval so runs at different kappa compare like for like."""
    start = cfg.seq_len - 1 + int(round(cfg.horizon * scene.fps))
    return list(range(start, len(scene), cfg.frame_stride))


@dataclass
class Prediction:
    frame: int
    saliency: np.ndarray | None
    fov: np.ndarray | None
    fused: np.ndarray


def predict_frames(scene: Scene, cfg: SessionConfig, feedback: list[int], saliency=None, fov_model=None):
    """Yield a :class:`Prediction` for every evaluation frame.

    The FoV branch sees feedback up to ``frame - offset`` only; saliency is
    taken on the target frame itself.  Either branch may be ``None``.
    """
    if saliency is None and fov_model is None:
        raise ValueError("need a saliency model, a FoV model, or both")
    if saliency is not None and not isinstance(saliency, SaliencyCache):
        saliency = SaliencyCache(saliency, scene, cfg.motion_mode)
    if fov_model is not None:
        fov_model.eval()
    offset = cfg.offset_frames(scene.fps)
    for j in evaluation_frames(scene, cfg):
        t = j - offset
        if t - cfg.seq_len + 1 < 0:
            raise ValueError(f"interval {cfg.interval}s needs more history than horizon {cfg.horizon}s provides")
        reads: list[float] = []
        p_v = None
        if fov_model is not None:
            seq = feedback_sequence(scene, feedback, t, cfg.seq_len, cfg.aggregation, reads)
            with torch.no_grad():
                p_v = fov_model(nx.as_tensor(seq)).numpy()
        if reads and max(reads) > scene.timestamp(t) + 1e-9:
            raise AssertionError(f"prediction for frame {j} read gaze later than feedback time")
        p_s = saliency(j) if saliency is not None else None
        if p_s is None:
            pred = p_v
        elif p_v is None:
            pred = p_s
        else:
            pred = fuse(p_s, p_v, cfg.regions)
        yield Prediction(j, p_s, p_v, pred)


def simulate_session(scene: Scene, cfg: SessionConfig, saliency=None, fov_model=None,
                     keep_predictions: bool = False) -> SessionResult:
    """Run the feedback/prediction loop over the scene and score every target frame.

    ``saliency`` is a saliency network or a :class:`SaliencyCache`; either
    branch may be ``None``, in which case the other branch's map is used
    alone.
    """
    if cfg.population > len(scene.traces):
        raise ValueError(f"population {cfg.population} exceeds the {len(scene.traces)} available traces")
    if tuple(cfg.grid) != scene.grid:
        raise ValueError(f"session grid {cfg.grid} does not match scene grid {scene.grid}")
    feedback = select_feedback_users(cfg.population, cfg.n_feedback, cfg.seed)
    held_out = [u for u in range(cfg.population) if u not in feedback]
    eval_users = list(range(cfg.population)) if cfg.include_feedback else held_out
    if not eval_users:
        raise ValueError("no held-out users left to evaluate; set include_feedback")
    offset = cfg.offset_frames(scene.fps)
    result = SessionResult(cfg, offset, feedback, eval_users)
    for p in predict_frames(scene, cfg, feedback, saliency, fov_model):
        j = p.frame
        gt = ground_truth(scene, eval_users, j)
        rec = {"frame": j, "timestamp_s": scene.timestamp(j), "interval_s": cfg.interval,
               "offset_frames": offset, "n_feedback": cfg.n_feedback}
        rec.update(score(p.fused, gt, fixation_pixels(scene, eval_users, j), cfg.tiles))
        result.records.append(rec)
        if keep_predictions:
            result.predictions[j] = p.fused
    return result
