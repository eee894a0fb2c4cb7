"""Spatial-temporal spherical saliency detector.

Spatial branch: five 3x3 spherical conv layers (BN + ReLU), 2x2 max-pooling
after the first four, then three unpool/conv stages that reuse the pooling
switches.  Temporal branch: six stride-2 spherical convs and two up-conv
stages, the first fed with the deepest features concatenated to layer 4.
Both feature maps meet at a quarter of the input resolution, pass through a
channel-then-spatial attention block, and a two-layer spherical head turns
the concatenation into a saliency map in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from . import numerics as nx
from .spconv import SpConvLayer, SphericalKernel

MOTION_MODES = ("frames", "flow")


@dataclass
class SaliencyConfig:
    frame_channels: int = 3
    s_channels: tuple[int, ...] = (8, 16, 16, 32)  # conv1..conv4; conv5 repeats conv4
    s_out: int = 16
    t_channels: tuple[int, ...] = (8, 16, 16, 16, 16, 16)  # layer 6 width == layer 4 width
    t_up: tuple[int, int] = (16, 16)
    cbam_channels: int = 16
    reduction: int = 4
    head_channels: int = 8
    motion_mode: str = "frames"
    seed: int = 0

    def __post_init__(self):
        if len(self.s_channels) != 4:
            raise ValueError("s_channels lists the widths of conv1..conv4")
        if len(self.t_channels) != 6:
            raise ValueError("t_channels lists six stride-2 layer widths")
        if self.motion_mode not in MOTION_MODES:
            raise ValueError(f"motion_mode must be one of {MOTION_MODES}")

    @property
    def motion_channels(self) -> int:
        return 2 * self.frame_channels if self.motion_mode == "frames" else 2

    @classmethod
    def paper_scale(cls) -> "SaliencyConfig":
        """Widths giving a 384-channel spatial-temporal concat and 64-channel attention."""
        return cls(s_channels=(32, 64, 128, 192), s_out=192,
                   t_channels=(32, 64, 128, 192, 192, 192), t_up=(192, 192),
                   cbam_channels=64, head_channels=64)

    @classmethod
    def tiny(cls, **kw) -> "SaliencyConfig":
        base = dict(s_channels=(2, 2, 2, 2), s_out=2, t_channels=(2, 2, 2, 2, 2, 2),
                    t_up=(2, 2), cbam_channels=4, reduction=2, head_channels=2)
        base.update(kw)
        return cls(**base)


@dataclass
class SaliencyFeatures:
    F_S: torch.Tensor
    F_T: torch.Tensor
    F_ST: torch.Tensor
    F_cbam: torch.Tensor
    F_prime: torch.Tensor
    attention: dict = field(default_factory=dict)


class SSpcnn(nn.Module):
    def __init__(self, cfg: SaliencyConfig, gen: torch.Generator):
        super().__init__()
        c1, c2, c3, c4 = cfg.s_channels
        widths = [cfg.frame_channels, c1, c2, c3, c4, c4]
        self.down = nn.ModuleList(SpConvLayer(widths[i], widths[i + 1], 3, generator=gen) for i in range(5))
        self.up = nn.ModuleList([
            SpConvLayer(c4, c3, 3, generator=gen),
            SpConvLayer(c3, c2, 3, generator=gen),
            SpConvLayer(c2, cfg.s_out, 3, generator=gen),
        ])

    def forward(self, frame: torch.Tensor, trace: dict | None = None) -> torch.Tensor:
        H, W = frame.shape[-2:]
        if H % 16 or W % 16:
            raise ValueError(f"spatial branch needs H, W divisible by 16, got {H}x{W}")
        x = frame
        switches = []
        for i, layer in enumerate(self.down):
            x = layer(x)
            if i < 4:
                x, sw = nx.maxpool2d(x)
                switches.append(sw)
        if trace is not None:
            trace["s_contraction"] = x
        for layer, sw in zip(self.up, reversed(switches[1:])):
            x = layer(nx.unpool2d(x, sw))
        if trace is not None:
            trace["s_expansion"] = x
        # expansion ends at H/2; align with the temporal branch at H/4
        x, _ = nx.maxpool2d(x)
        return x


class TSpcnn(nn.Module):
    def __init__(self, cfg: SaliencyConfig, gen: torch.Generator):
        super().__init__()
        t = cfg.t_channels
        widths = [cfg.motion_channels, *t]
        self.in_channels = cfg.motion_channels
        self.down = nn.ModuleList(SpConvLayer(widths[i], widths[i + 1], 3, stride=2, generator=gen)
                                  for i in range(6))
        self.up = nn.ModuleList([
            SpConvLayer(t[5] + t[3], cfg.t_up[0], 3, generator=gen),
            SpConvLayer(cfg.t_up[0], cfg.t_up[1], 3, generator=gen),
        ])

    def forward(self, motion: torch.Tensor, trace: dict | None = None) -> torch.Tensor:
        if motion.shape[-3] != self.in_channels:
            raise ValueError(f"temporal branch expects {self.in_channels} motion channels, got {motion.shape[-3]}")
        H, W = motion.shape[-2:]
        if H % 64 or W % 64:
            raise ValueError(f"temporal branch needs H, W divisible by 64, got {H}x{W}")
        x = motion
        outs = []
        for layer in self.down:
            x = layer(x)
            outs.append(x)
        skip = outs[3]
        x = torch.cat([nx.upsample(x, tuple(skip.shape[-2:])), skip], dim=-3)
        if trace is not None:
            trace["t_contraction"] = outs[-1]
            trace["t_stage1_in"] = x
        for layer in self.up:
            x = layer(nx.upsample(x, (2 * x.shape[-2], 2 * x.shape[-1])))
        return x


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int, gen: torch.Generator):
        super().__init__()
        hidden = max(1, channels // reduction)
        b1, b2 = 1 / math.sqrt(channels), 1 / math.sqrt(hidden)
        self.w1 = nn.Parameter((torch.rand(hidden, channels, generator=gen, dtype=nx.DTYPE) * 2 - 1) * b1)
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=nx.DTYPE))
        self.w2 = nn.Parameter((torch.rand(channels, hidden, generator=gen, dtype=nx.DTYPE) * 2 - 1) * b2)
        self.b2 = nn.Parameter(torch.zeros(channels, dtype=nx.DTYPE))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        avg = f.mean(dim=(-2, -1))
        mx = f.amax(dim=(-2, -1))
        m = torch.sigmoid(nx.mlp(avg, self.w1, self.b1, self.w2, self.b2)
                          + nx.mlp(mx, self.w1, self.b1, self.w2, self.b2))
        return m[..., None, None]  # C x 1 x 1


class CbamBlock(nn.Module):
    """Channel attention (shared MLP over avg/max pools) then 7x7 spherical spatial attention."""

    def __init__(self, channels: int, reduction: int = 4, gen: torch.Generator | None = None):
        super().__init__()
        gen = gen or torch.Generator().manual_seed(0)
        self.channel = ChannelAttention(channels, reduction, gen)
        self.spatial = SphericalKernel(2, 1, 7, bias=False, generator=gen)

    def attention(self, f: torch.Tensor) -> dict:
        m_c = self.channel(f)
        m_c_prime = m_c * f
        pooled = torch.cat([m_c_prime.mean(dim=-3, keepdim=True), m_c_prime.amax(dim=-3, keepdim=True)], dim=-3)
        m_s = torch.sigmoid(self.spatial(pooled))  # 1 x H x W
        return {"M_c": m_c, "M_c_prime": m_c_prime, "M_s": m_s, "F_cbam": m_s * m_c_prime}

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.attention(f)["F_cbam"]


def cbam(f_st: torch.Tensor, block: CbamBlock) -> torch.Tensor:
    return block(f_st)


class InferenceHead(nn.Module):
    """Two spherical conv layers, resize to the target grid, min-max normalise."""

    def __init__(self, in_channels: int, hidden: int, gen: torch.Generator):
        super().__init__()
        self.conv1 = SpConvLayer(in_channels, hidden, 3, generator=gen)
        self.conv2 = SpConvLayer(hidden, 1, 3, batchnorm=False, activation="relu", generator=gen)

    def raw(self, f: torch.Tensor) -> torch.Tensor:
        return self.conv2(self.conv1(f))[..., 0, :, :]

    def forward(self, f: torch.Tensor, out_shape: tuple[int, int]) -> torch.Tensor:
        return nx.minmax_normalize(nx.upsample(self.raw(f), out_shape))


class SaliencyNet(nn.Module):
    def __init__(self, cfg: SaliencyConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or SaliencyConfig()
        gen = torch.Generator().manual_seed(cfg.seed)
        self.spatial = SSpcnn(cfg, gen)
        self.temporal = TSpcnn(cfg, gen)
        st = cfg.s_out + cfg.t_up[1]
        self.project = SphericalKernel(st, cfg.cbam_channels, 1, generator=gen)
        self.cbam = CbamBlock(cfg.cbam_channels, cfg.reduction, gen)
        self.head = InferenceHead(st + cfg.cbam_channels, cfg.head_channels, gen)

    def features(self, frame: torch.Tensor, motion: torch.Tensor) -> SaliencyFeatures:
        f_s = self.spatial(frame)
        f_t = self.temporal(motion)
        f_st = torch.cat([f_s, f_t], dim=-3)
        att = self.cbam.attention(self.project(f_st))
        f_prime = torch.cat([f_st, att["F_cbam"]], dim=-3)
        return SaliencyFeatures(f_s, f_t, f_st, att["F_cbam"], f_prime, att)

    def forward(self, frame: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        feats = self.features(frame, motion)
        return self.head(feats.F_prime, tuple(frame.shape[-2:]))


def s_spcnn_forward(frame: torch.Tensor, net: SaliencyNet) -> torch.Tensor:
    return net.spatial(frame)


def t_spcnn_forward(motion: torch.Tensor, net: SaliencyNet) -> torch.Tensor:
    return net.temporal(motion)


def saliency_head(f_prime: torch.Tensor, net: SaliencyNet, out_shape: tuple[int, int]) -> torch.Tensor:
    return net.head(f_prime, out_shape)


def luminance(frame: torch.Tensor) -> torch.Tensor:
    if frame.shape[-3] == 3:
        w = torch.tensor([0.299, 0.587, 0.114], dtype=frame.dtype)
        return torch.einsum("c,...chw->...hw", w, frame)
    return frame.mean(dim=-3)


def normal_flow(prev: torch.Tensor, cur: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Two-channel motion estimate from frame differencing (normal flow).

    ``-I_t * grad(I) / (|grad(I)|^2 + eps)`` with central differences; the
    column derivative wraps around the seam.  Identical frames give zero.
    """
    a, b = luminance(prev), luminance(cur)
    i_t = b - a
    m = 0.5 * (a + b)
    i_x = 0.5 * (torch.roll(m, -1, dims=-1) - torch.roll(m, 1, dims=-1))
    up = torch.cat([m[..., :1, :], m[..., :-1, :]], dim=-2)
    down = torch.cat([m[..., 1:, :], m[..., -1:, :]], dim=-2)
    i_y = 0.5 * (down - up)
    den = i_x**2 + i_y**2 + eps
    return torch.stack([-i_t * i_x / den, -i_t * i_y / den], dim=-3)


def motion_input(prev: torch.Tensor, cur: torch.Tensor, mode: str = "frames",
                 flow: torch.Tensor | None = None) -> torch.Tensor:
    """Temporal-branch input for the frame pair (prev, cur).

    ``frames`` stacks the two frames; ``flow`` uses the precomputed 2-channel
    field when given and otherwise the frame-differencing estimate.
    """
    if mode == "frames":
        return torch.cat([prev, cur], dim=-3)
    if mode == "flow":
        if flow is not None:
            if flow.shape[-3] != 2:
                raise ValueError("precomputed flow must have 2 channels")
            return flow
        return normal_flow(prev, cur)
    raise ValueError(f"unknown motion mode {mode!r}")
