"""Limited-feedback FoV prediction: heatmap aggregation, a two-layer spherical
ConvGRU, and the inference head that turns the last hidden state into a map."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import numerics as nx
from .saliency import InferenceHead
from .spconv import SphericalKernel


def aggregate_user_fovs(heatmaps: Sequence[np.ndarray], grid: tuple[int, int] | None = None,
                        mode: str = "sum") -> np.ndarray:
    """Elementwise sum of per-user heatmaps (``mode="mean"`` divides by N).

    An empty list gives a zero map, which needs ``grid``.
    """
    if len(heatmaps) == 0:
        if grid is None:
            raise ValueError("grid is required to aggregate zero heatmaps")
        return np.zeros(grid)
    shape = np.shape(heatmaps[0])
    if grid is not None and tuple(shape) != tuple(grid):
        raise ValueError(f"heatmap grid {shape} != {grid}")
    for h in heatmaps:
        if np.shape(h) != shape:
            raise ValueError("all heatmaps must share one grid")
    total = np.sum(np.stack(heatmaps), axis=0)
    if mode == "mean":
        return total / len(heatmaps)
    if mode != "sum":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return total


class SpConvGruCell(nn.Module):
    """GRU cell whose input-to-state and state-to-state maps are spherical convs.

    Gates are applied elementwise:
        I = sigmoid(W_z * [H, X]);  R = sigmoid(W_r * [H, X])
        H~ = tanh(W_o * [R . H, X]);  H' = (1 - I) . H + I . H~
    """

    def __init__(self, in_channels: int, hidden: int = 64, k: int = 3, gen: torch.Generator | None = None):
        super().__init__()
        gen = gen or torch.Generator().manual_seed(0)
        self.in_channels, self.hidden = in_channels, hidden
        self.W_z = SphericalKernel(hidden + in_channels, hidden, k, generator=gen)
        self.W_r = SphericalKernel(hidden + in_channels, hidden, k, generator=gen)
        self.W_o = SphericalKernel(hidden + in_channels, hidden, k, generator=gen)

    def gates(self, x: torch.Tensor, h_prev: torch.Tensor) -> dict:
        if x.shape[-3] != self.in_channels or h_prev.shape[-3] != self.hidden:
            raise ValueError(f"expected {self.in_channels} input / {self.hidden} hidden channels, "
                             f"got {x.shape[-3]} / {h_prev.shape[-3]}")
        if x.shape[-2:] != h_prev.shape[-2:]:
            raise ValueError("input and hidden state grids differ")
        hx = torch.cat([h_prev, x], dim=-3)
        i_t = torch.sigmoid(self.W_z(hx))
        r_t = torch.sigmoid(self.W_r(hx))
        cand = torch.tanh(self.W_o(torch.cat([r_t * h_prev, x], dim=-3)))
        h_t = (1 - i_t) * h_prev + i_t * cand
        return {"I": i_t, "R": r_t, "H_tilde": cand, "H": h_t}

    def forward(self, x: torch.Tensor, h_prev: torch.Tensor) -> torch.Tensor:
        return self.gates(x, h_prev)["H"]

    def init_state(self, grid: tuple[int, int]) -> torch.Tensor:
        return torch.zeros((self.hidden, *grid), dtype=nx.DTYPE)


def gru_step(cell: SpConvGruCell, x_t: torch.Tensor, h_prev: torch.Tensor) -> torch.Tensor:
    return cell(x_t, h_prev)


@dataclass
class FovConfig:
    hidden: int = 64
    head_channels: int = 16
    k: int = 3
    aggregation: str = "sum"
    seed: int = 0

    @classmethod
    def desk(cls, **kw) -> "FovConfig":
        base = dict(hidden=8, head_channels=8)
        base.update(kw)
        return cls(**base)


class FovPredictor(nn.Module):
    """Two stacked cells (layer 2 reads layer 1's hidden state) plus the head."""

    def __init__(self, cfg: FovConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or FovConfig()
        gen = torch.Generator().manual_seed(cfg.seed)
        self.cell1 = SpConvGruCell(1, cfg.hidden, cfg.k, gen)
        self.cell2 = SpConvGruCell(cfg.hidden, cfg.hidden, cfg.k, gen)
        self.head = InferenceHead(cfg.hidden, cfg.head_channels, gen)

    def hidden_states(self, sequence: torch.Tensor) -> list[torch.Tensor]:
        """Layer-2 hidden state after each step of ``sequence`` ([T, H, W])."""
        if sequence.dim() != 3 or sequence.shape[0] == 0:
            raise ValueError("sequence must be a non-empty [T, H, W] stack of heatmaps")
        grid = tuple(sequence.shape[-2:])
        h1 = self.cell1.init_state(grid)
        h2 = self.cell2.init_state(grid)
        out = []
        for x in sequence:
            h1 = self.cell1(x[None], h1)
            h2 = self.cell2(h1, h2)
            out.append(h2)
        return out

    def forward(self, sequence: torch.Tensor, all_steps: bool = False):
        grid = tuple(sequence.shape[-2:])
        states = self.hidden_states(sequence)
        if all_steps:
            return [self.head(h, grid) for h in states]
        return self.head(states[-1], grid)


def predict_fov(model: FovPredictor, sequence) -> torch.Tensor:
    """P_v for the step after the last heatmap in ``sequence`` ([T, H, W])."""
    seq = nx.as_tensor(sequence)
    return model(seq)
