"""SGD with momentum and coupled weight decay, the two training loops, and the
gradient-verification suite run before training."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

from . import checkpoint
from . import numerics as nx
from .evalkit import sequence_loss, weighted_mse
from .fusion import DEFAULT_REGIONS, fuse_tensors

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.1
    batch_size: int = 25
    momentum: float = 0.9
    weight_decay: float = 1e-5
    seq_len: int = 3
    max_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k in ("seed", "weight_decay"):
                continue
            if not v > 0:
                raise ValueError(f"{k} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        """Scaled-down rate and batch for micro networks on a laptop CPU."""
        base = dict(lr=1e-3, batch_size=4)
        base.update(kw)
        return cls(**base)


class ParamStore:
    """Named parameters with their momentum buffers; frozen names are never updated."""

    def __init__(self, params: dict[str, torch.Tensor] | nn.Module, frozen: Iterable[str] = ()):
        if isinstance(params, nn.Module):
            params = dict(params.named_parameters())
        self.params = dict(params)
        self.momentum = {k: torch.zeros_like(v) for k, v in self.params.items()}
        self.frozen = set(frozen)

    def grads(self) -> dict[str, torch.Tensor]:
        return {k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def sgd_step(store: ParamStore, grads: dict[str, torch.Tensor], cfg: TrainConfig) -> ParamStore:
    """``v <- m v + g + wd theta``; ``theta <- theta - lr v``."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    with torch.no_grad():
        for name, p in store.params.items():
            if name in store.frozen:
                continue
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
            v = store.momentum[name]
            v.mul_(cfg.momentum).add_(g).add_(p, alpha=cfg.weight_decay)
            p.sub_(cfg.lr * v)
    return store


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: dict):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    checkpoint_hash: str | None = None

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.log]


def _run(model: nn.Module, n_items: int, loss_of: Callable[[int], torch.Tensor], cfg: TrainConfig,
         path=None, meta: dict | None = None, trainable: nn.Module | None = None) -> TrainResult:
    if n_items == 0:
        raise ValueError("training set is empty")
    trainable = trainable or model
    store = ParamStore(trainable)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    last_good = copy.deepcopy(model.state_dict())
    model.train()
    for step in range(cfg.max_steps):
        batch = rng.choice(n_items, size=min(cfg.batch_size, n_items), replace=False)
        store.zero_grad()
        loss = sum(loss_of(int(i)) for i in batch) / len(batch)
        if not torch.isfinite(loss):
            model.load_state_dict(last_good)
            if path is not None:
                checkpoint.save(path, model, meta)
            raise TrainingDiverged(step, last_good)
        loss.backward()
        try:
            sgd_step(store, store.grads(), cfg)
        except FloatingPointError:
            model.load_state_dict(last_good)
            if path is not None:
                checkpoint.save(path, model, meta)
            raise TrainingDiverged(step, last_good) from None
        last_good = copy.deepcopy(model.state_dict())
        result.log.append({"step": step, "loss": loss.item(), "lr": cfg.lr})
        log.debug("step %d loss %.6g", step, loss.item())
    model.eval()
    if path is not None:
        result.checkpoint_hash = checkpoint.save(path, model, meta)
    return result


@dataclass
class SaliencySample:
    frame: torch.Tensor  # [3, H, W]
    motion: torch.Tensor  # [2 or 6, H, W]
    target: torch.Tensor  # [H, W] in [0, 1]


def train_saliency(net: nn.Module, dataset: Sequence[SaliencySample], cfg: TrainConfig,
                   path=None) -> TrainResult:
    """Fit the saliency detector to per-frame density targets."""
    def loss_of(i):
        s = dataset[i]
        return weighted_mse(net(s.frame, s.motion), s.target)

    meta = {"kind": "saliency", "config": _jsonable(net.cfg), "train": asdict(cfg)}
    return _run(net, len(dataset), loss_of, cfg, path, meta)


@dataclass
class FovSample:
    sequence: torch.Tensor  # [R, H, W] aggregated feedback heatmaps
    targets: torch.Tensor  # [R, H, W] ground truth at each step's prediction time
    saliency: torch.Tensor | None = None  # [R, H, W] frozen saliency at the prediction times


def train_fov(model: nn.Module, samples: Sequence[FovSample], cfg: TrainConfig, path=None,
              regions: tuple[int, int] = DEFAULT_REGIONS, saliency_net: nn.Module | None = None,
              saliency_inputs: Callable[[int], list[tuple[torch.Tensor, torch.Tensor]]] | None = None) -> TrainResult:
    """Fit the FoV predictor; the loss averages weighted MSE over the R steps.

    When saliency maps are available (precomputed on the samples, or
    produced by ``saliency_net`` from ``saliency_inputs``) the loss is taken
    on the fused map; the saliency network stays frozen in eval mode.
    """
    if saliency_net is not None:
        saliency_net.eval()
        for p in saliency_net.parameters():
            p.requires_grad_(False)

    def loss_of(i):
        s = samples[i]
        preds = model(s.sequence, all_steps=True)
        sal = s.saliency
        if sal is None and saliency_net is not None and saliency_inputs is not None:
            with torch.no_grad():
                sal = torch.stack([saliency_net(f, m) for f, m in saliency_inputs(i)])
        if sal is not None:
            preds = [fuse_tensors(ps, pv, regions) for ps, pv in zip(sal, preds)]
        return sequence_loss(preds, list(s.targets))

    meta = {"kind": "fov", "config": _jsonable(model.cfg), "train": asdict(cfg)}
    try:
        return _run(model, len(samples), loss_of, cfg, path, meta)
    finally:
        if saliency_net is not None:
            for p in saliency_net.parameters():
                p.requires_grad_(True)


def _jsonable(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ----------------------------------------------------------------------------
# gradient verification


def _rand(gen, *shape, scale=1.0, grad=True):
    t = torch.randn(shape, generator=gen, dtype=nx.DTYPE) * scale
    return t.requires_grad_(grad)


def gradient_cases(seed: int = 0) -> list[tuple]:
    """(name, op, inputs[, epsilon]) cases covering every differentiable operation on 3 shapes each."""
    from .fovgru import FovConfig, FovPredictor, SpConvGruCell
    from .saliency import CbamBlock, InferenceHead, SaliencyConfig, SaliencyNet
    from .spconv import build_sampling_grid, spconv2d

    gen = torch.Generator().manual_seed(seed)
    cases: list[tuple[str, Callable, list]] = []
    shapes = [(1, 4, 8), (2, 5, 6), (3, 6, 10)]
    for i, (C, H, W) in enumerate(shapes):
        x = _rand(gen, C, H, W)
        cases.append((f"relu[{i}]", nx.relu, [x.detach().abs().add(0.1).mul(torch.sign(x.detach())).requires_grad_()]))
        cases.append((f"sigmoid[{i}]", nx.sigmoid, [_rand(gen, C, H, W)]))
        cases.append((f"tanh[{i}]", nx.tanh, [_rand(gen, C, H, W)]))
        cases.append((f"add[{i}]", torch.add, [_rand(gen, C, H, W), _rand(gen, C, H, W)]))
        cases.append((f"mul[{i}]", torch.mul, [_rand(gen, C, H, W), _rand(gen, C, H, W)]))
        cases.append((f"concat[{i}]", lambda a, b: torch.cat([a, b], 0), [_rand(gen, C, H, W), _rand(gen, 2, H, W)]))
        k = 3
        for pad in ("zero", "wrap"):
            cases.append((f"conv2d_{pad}[{i}]", lambda a, w, p=pad: nx.conv2d(a, w, 1, p),
                          [_rand(gen, C, H, W), _rand(gen, 2, C, k, k)]))
        cases.append((f"conv2d_stride2[{i}]", lambda a, w: nx.conv2d(a, w, 2, "wrap"),
                      [_rand(gen, C, H, W), _rand(gen, 2, C, k, k)]))
        locs = np.column_stack([np.linspace(-0.3, H - 0.6, 7), np.linspace(-1.7, W + 0.4, 7)])
        cases.append((f"bilinear_sample[{i}]", lambda a, l=locs: nx.bilinear_sample(a, l), [_rand(gen, C, H, W)]))
        cases.append((f"batchnorm_train[{i}]", lambda a, g, b: nx.batchnorm(a, g, b, training=True),
                      [_rand(gen, C, H, W), _rand(gen, C), _rand(gen, C)]))
        rm, rv = torch.randn(C, generator=gen, dtype=nx.DTYPE), torch.rand(C, generator=gen, dtype=nx.DTYPE) + 0.5
        cases.append((f"batchnorm_eval[{i}]", lambda a, g, b, rm=rm, rv=rv: nx.batchnorm(a, g, b, rm, rv, training=False),
                      [_rand(gen, C, H, W), _rand(gen, C), _rand(gen, C)]))
        hid = C + 1
        cases.append((f"mlp[{i}]", nx.mlp, [_rand(gen, 2, C), _rand(gen, hid, C), _rand(gen, hid),
                                            _rand(gen, C, hid), _rand(gen, C)]))
        cases.append((f"upsample[{i}]", lambda a: nx.upsample(a, (2 * a.shape[-2], 2 * a.shape[-1])), [_rand(gen, C, H, W)]))

    for i, (C, H, W) in enumerate([(1, 4, 8), (2, 4, 6), (2, 6, 8)]):
        # distinct values keep pooling away from ties
        vals = torch.randperm(C * 2 * H * 2 * W, generator=gen).to(nx.DTYPE).reshape(C, 2 * H, 2 * W) / 10
        cases.append((f"maxpool[{i}]", lambda a: nx.maxpool2d(a)[0], [vals.clone().requires_grad_()]))
        _, sw = nx.maxpool2d(vals)
        cases.append((f"unpool[{i}]", lambda a, s=sw: nx.unpool2d(a, s), [_rand(gen, C, H, W)]))

    for i, ((C, H, W), k, s) in enumerate([((1, 4, 8), 3, 1), ((2, 6, 12), 3, 2), ((2, 5, 10), 5, 1)]):
        grid = build_sampling_grid((H, W), k, s)
        cases.append((f"spconv[{i}]", lambda a, w, b, g=grid: spconv2d(a, w, g, b),
                      [_rand(gen, C, H, W), _rand(gen, 2, C, k, k), _rand(gen, 2)]))

    for i, (C, H, W) in enumerate([(4, 4, 8), (6, 6, 12), (8, 8, 16)]):
        block = CbamBlock(C, 2, torch.Generator().manual_seed(seed + i))
        cases.append((f"cbam[{i}]", block, [_rand(gen, C, H, W)]))
        cell = SpConvGruCell(1, C, 3, torch.Generator().manual_seed(seed + i))
        cases.append((f"gru_cell[{i}]", cell, [_rand(gen, 1, H, W), _rand(gen, C, H, W, scale=0.5)]))
        head = InferenceHead(C, 2, torch.Generator().manual_seed(seed + i)).eval()
        with torch.no_grad():
            head.conv2.kernel.bias.fill_(0.5)  # keep the output ReLU active
        cases.append((f"head[{i}]", lambda f, h=head: h(f, (2 * f.shape[-2], 2 * f.shape[-1])), [_rand(gen, C, H, W)]))
        cases.append((f"weighted_mse[{i}]", weighted_mse, [_rand(gen, H, W), _rand(gen, H, W)]))
        cases.append((f"fusion[{i}]", lambda a, b: fuse_tensors(a, b, (2, 2)),
                      [torch.rand(H, W, generator=gen, dtype=nx.DTYPE).requires_grad_(),
                       torch.rand(H, W, generator=gen, dtype=nx.DTYPE).requires_grad_()]))

    for i, (H, W) in enumerate([(64, 128), (128, 128), (64, 192)]):
        net = SaliencyNet(SaliencyConfig.tiny(seed=seed + i)).eval()
        net.train()  # batch statistics: a smooth function of the input
        frame = torch.rand(3, H, W, generator=gen, dtype=nx.DTYPE)
        motion = torch.rand(6, H, W, generator=gen, dtype=nx.DTYPE)
        params = [p for _, p in list(net.named_parameters())[:3]]
        # parameters touch every pixel, so a small step keeps ReLU/pooling kinks out of the stencil
        cases.append((f"saliency_net[{i}]", lambda f, m, *_ps, n=net: n.head.raw(n.features(f, m).F_prime),
                      [frame.requires_grad_(), motion, *params], 1e-7))

    for i, (H, W) in enumerate([(4, 8), (6, 12), (8, 16)]):
        model = FovPredictor(FovConfig(hidden=3, head_channels=2, seed=seed + i)).eval()
        seq = torch.rand(3, H, W, generator=gen, dtype=nx.DTYPE).requires_grad_()
        cases.append((f"fov_predictor[{i}]", lambda s, m=model: m.head.raw(m.hidden_states(s)[-1]), [seq]))
        params = [model.cell1.W_z.weight, model.cell2.W_o.weight]
        cases.append((f"fov_predictor_params[{i}]",
                      lambda s, *_ps, m=model: m.head.raw(m.hidden_states(s)[-1]), [seq.detach(), *params], 1e-7))
    return cases


def gradient_suite(seed: int = 0, max_coords: int = 24) -> list[nx.GradCheckReport]:
    reports = []
    for name, op, inputs, *eps in gradient_cases(seed):
        reports.append(nx.grad_check(op, inputs, epsilon=eps[0] if eps else 1e-5, name=name,
                                     max_coords=max_coords, seed=seed))
    return reports
