"""Desk-scale end-to-end runs: build training sets from a synthetic scene,
train the saliency detector then the FoV predictor (saliency frozen), and
sweep the feedback count and prediction interval on a held-out scene."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .. import checkpoint
from .. import numerics as nx
from ..fovgru import FovConfig, FovPredictor
from ..saliency import SaliencyConfig, SaliencyNet, motion_input
from ..trainer import FovSample, SaliencySample, TrainConfig, train_fov, train_saliency
from .session import SaliencyCache, SessionConfig, SessionResult, feedback_sequence, ground_truth, simulate_session
from .synthetic import Scene, SyntheticScene, generate_scene

log = logging.getLogger(__name__)


def saliency_dataset(scene: Scene, frames, motion_mode: str = "frames") -> list[SaliencySample]:
    out = []
    for j in frames:
        cur = nx.as_tensor(scene.frames[j])
        prev = nx.as_tensor(scene.frames[max(j - 1, 0)])
        out.append(SaliencySample(cur, motion_input(prev, cur, motion_mode), nx.as_tensor(scene.saliency[j])))
    return out


def fov_dataset(scene: Scene, n_samples: int, rng: np.random.Generator, offset: int = 1,
                seq_len: int = 3, max_feedback: int = 5, population: int | None = None,
                saliency: SaliencyCache | None = None, aggregation: str = "sum") -> list[FovSample]:
    """Random (feedback set, time) windows; each step's target is the rest of
    the population's viewing ``offset`` frames after its feedback frame."""
    population = population or len(scene.traces)
    last = len(scene) - 1 - offset
    out = []
    for _ in range(n_samples):
        n = int(rng.integers(1, max_feedback + 1))
        users = sorted(int(u) for u in rng.choice(population, size=n, replace=False))
        others = [u for u in range(population) if u not in users]
        t = int(rng.integers(2 * seq_len - 2, last + 1))
        steps = range(t - seq_len + 1, t + 1)
        seq = np.stack([feedback_sequence(scene, users, s, 1, aggregation)[0] for s in steps])
        targets = np.stack([ground_truth(scene, others, s + offset) for s in steps])
        sal = None
        if saliency is not None:
            sal = nx.as_tensor(np.stack([saliency(s + offset) for s in steps]))
        out.append(FovSample(nx.as_tensor(seq), nx.as_tensor(targets), sal))
    return out


@dataclass
class ToyConfig:
    scene: SyntheticScene = field(default_factory=SyntheticScene)
    train_scene_seed: int = 1000
    saliency: SaliencyConfig = field(default_factory=lambda: SaliencyConfig.tiny(
        s_channels=(4, 8, 8, 8), s_out=8, t_channels=(4, 4, 4, 4, 4, 4), t_up=(4, 4),
        cbam_channels=8, reduction=4, head_channels=4))
    fov: FovConfig = field(default_factory=lambda: FovConfig(hidden=4, head_channels=4))
    saliency_train: TrainConfig = field(default_factory=lambda: TrainConfig.desk(lr=0.01, batch_size=2, max_steps=150))
    fov_train: TrainConfig = field(default_factory=lambda: TrainConfig.desk(lr=0.02, batch_size=2, max_steps=80))
    saliency_frames: int = 40
    fov_samples: int = 60
    train_offset: int = 1
    max_train_feedback: int = 5
    seed: int = 0

    def with_seed(self, seed: int) -> "ToyConfig":
        return replace(self, seed=seed, scene=replace(self.scene, seed=seed),
                       saliency=replace(self.saliency, seed=seed), fov=replace(self.fov, seed=seed),
                       saliency_train=replace(self.saliency_train, seed=seed),
                       fov_train=replace(self.fov_train, seed=seed))


@dataclass
class ToyModels:
    saliency: SaliencyNet
    fov: FovPredictor
    saliency_log: list
    fov_log: list
    checkpoint_hashes: dict


def train_toy(cfg: ToyConfig, out_dir=None) -> ToyModels:
    """Saliency first, then the FoV predictor against fused maps with saliency frozen."""
    torch.manual_seed(cfg.seed)
    scene = generate_scene(replace(cfg.scene, seed=cfg.scene.seed + cfg.train_scene_seed))
    rng = np.random.default_rng(cfg.seed)
    sal_net = SaliencyNet(cfg.saliency)
    frames = sorted(int(j) for j in rng.choice(np.arange(1, len(scene)), size=cfg.saliency_frames, replace=False))
    t0 = time.perf_counter()
    sal_path = None if out_dir is None else f"{out_dir}/saliency.ckpt"
    res_s = train_saliency(sal_net, saliency_dataset(scene, frames, cfg.saliency.motion_mode),
                           cfg.saliency_train, sal_path)
    log.info("saliency trained in %.1fs, loss %.4g -> %.4g", time.perf_counter() - t0,
             res_s.losses[0], res_s.losses[-1])
    cache = SaliencyCache(sal_net, scene, cfg.saliency.motion_mode)
    samples = fov_dataset(scene, cfg.fov_samples, rng, cfg.train_offset, cfg.fov_train.seq_len,
                          cfg.max_train_feedback, saliency=cache, aggregation=cfg.fov.aggregation)
    fov = FovPredictor(cfg.fov)
    t0 = time.perf_counter()
    fov_path = None if out_dir is None else f"{out_dir}/fov.ckpt"
    res_f = train_fov(fov, samples, cfg.fov_train, fov_path)
    log.info("fov trained in %.1fs, loss %.4g -> %.4g", time.perf_counter() - t0,
             res_f.losses[0], res_f.losses[-1])
    return ToyModels(sal_net, fov, res_s.log, res_f.log,
                     {"saliency": res_s.checkpoint_hash, "fov": res_f.checkpoint_hash})


@dataclass
class SweepResult:
    by_feedback: dict[int, float]  # N -> mean accuracy at the shortest interval
    by_offset: dict[int, float]  # offset frames -> mean accuracy with the largest N
    runs: list[SessionResult]


def sweep(models: ToyModels, scene: Scene, base: SessionConfig, feedback_counts=(0, 2, 5),
          intervals=(0.03, 0.5, 1.0)) -> SweepResult:
    """Accuracy against N at ``intervals[0]`` and against interval at ``max(feedback_counts)``."""
    cache = SaliencyCache(models.saliency, scene, base.motion_mode)
    runs, by_n, by_off = [], {}, {}
    for n in feedback_counts:
        r = simulate_session(scene, replace(base, n_feedback=n, interval=intervals[0]), cache, models.fov)
        runs.append(r)
        by_n[n] = r.mean("accuracy")
    n_max = max(feedback_counts)
    for k in intervals:
        hit = next((r for r in runs if r.config.n_feedback == n_max and r.config.interval == k), None)
        r = hit or simulate_session(scene, replace(base, n_feedback=n_max, interval=k), cache, models.fov)
        if hit is None:
            runs.append(r)
        by_off[r.offset] = r.mean("accuracy")
    return SweepResult(by_n, by_off, runs)


def _config_from_meta(cls, meta: dict):
    cfg = meta.get("config", {})
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})


def load_saliency(path) -> SaliencyNet:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "saliency":
        raise checkpoint.CheckpointError(f"{path} is not a saliency checkpoint")
    net = SaliencyNet(_config_from_meta(SaliencyConfig, meta))
    checkpoint.load_into(net, tensors)
    return net.eval()


def load_fov(path) -> FovPredictor:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "fov":
        raise checkpoint.CheckpointError(f"{path} is not a FoV checkpoint")
    model = FovPredictor(_config_from_meta(FovConfig, meta))
    checkpoint.load_into(model, tensors)
    return model.eval()
