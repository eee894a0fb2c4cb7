"""Global-regional disparity fusion of a saliency map and a predicted FoV map.

Each map is weighted by ``(M - m_bar)**2`` where ``M`` is its global maximum
and ``m_bar`` the mean of its regional maxima: a map with one dominant peak
gets a large weight, a flat or evenly speckled map a small one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import numerics as nx

DEFAULT_REGIONS = (8, 8)


@dataclass(frozen=True)
class DisparityStats:
    M: float
    m_bar: float
    regions: tuple[int, int]

    @property
    def weight(self) -> float:
        return (self.M - self.m_bar) ** 2


def region_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into ``parts`` blocks; the last absorbs the remainder."""
    step = n // parts
    return [(i * step, n if i == parts - 1 else (i + 1) * step) for i in range(parts)]


def _regional_maxima(p: torch.Tensor, regions: tuple[int, int]) -> torch.Tensor:
    rows, cols = regions
    H, W = p.shape[-2:]
    if rows < 1 or cols < 1 or rows > H or cols > W:
        raise ValueError(f"region grid {regions} does not fit a {H}x{W} map")
    return torch.stack([p[r0:r1, c0:c1].max()
                        for r0, r1 in region_bounds(H, rows) for c0, c1 in region_bounds(W, cols)])


def _disparity(p: torch.Tensor, regions: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
    maxima = _regional_maxima(p, regions)
    return maxima.max(), maxima.mean()


def regional_stats(p, regions: tuple[int, int] = DEFAULT_REGIONS) -> DisparityStats:
    t = nx.as_tensor(p)
    M, m_bar = _disparity(t, regions)
    return DisparityStats(float(M), float(m_bar), tuple(regions))


def fuse_tensors(p_s: torch.Tensor, p_v: torch.Tensor,
                 regions: tuple[int, int] = DEFAULT_REGIONS) -> torch.Tensor:
    """Differentiable fusion; inputs are [H, W] maps already scaled to [0, 1]."""
    if p_s.shape != p_v.shape:
        raise ValueError(f"grid mismatch: {tuple(p_s.shape)} vs {tuple(p_v.shape)}")
    Ms, ms = _disparity(p_s, regions)
    Mv, mv = _disparity(p_v, regions)
    ws, wv = (Ms - ms) ** 2, (Mv - mv) ** 2
    if ws.item() == 0.0 and wv.item() == 0.0:
        return 0.5 * (p_s + p_v)
    return nx.minmax_normalize(p_s * ws + p_v * wv)


def fuse(p_s, p_v, regions: tuple[int, int] = DEFAULT_REGIONS) -> np.ndarray:
    """Fuse two [0, 1] ERP maps; returns a numpy map in [0, 1]."""
    with torch.no_grad():
        return fuse_tensors(nx.as_tensor(p_s), nx.as_tensor(p_v), tuple(regions)).numpy()
