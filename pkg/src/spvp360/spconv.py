"""Spherical convolution on ERP grids.

A k x k kernel is laid out once around the point (lam=0, psi=0): its taps sit
one input pixel apart in latitude and longitude.  For every output row the
patch is tilted on the sphere to that row's latitude and re-projected to
fractional ERP coordinates.  Columns reuse the row pattern shifted in
longitude, so one weight set serves the whole sphere and the layer is exactly
covariant under column shifts (stride 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from torch import nn

from . import numerics as nx
from .sphere_geom import tilt_matrix, unit_vectors, vectors_to_angles

LAYER_BN_EPS = 1e-5


@dataclass(frozen=True)
class SamplingGrid:
    """Precomputed gather for one (input grid, kernel, stride) combination.

    ``row_offsets[r]`` and ``col_offsets[r]`` hold the k*k fractional input
    coordinates for output row ``r`` relative to the output pixel centre
    (rows absolute, columns relative).  ``idx``/``wts`` are the flattened
    bilinear corners for every (tap, output pixel).
    """

    in_shape: tuple[int, int]
    out_shape: tuple[int, int]
    k: int
    stride: int
    rows: np.ndarray  # [H_out, k*k] absolute fractional input rows
    col_offsets: np.ndarray  # [H_out, k*k] column offsets from the output centre column
    idx: torch.Tensor  # [4, k*k*H_out*W_out]
    wts: torch.Tensor
    gather: torch.Tensor  # sparse [k*k*H_out*W_out, H*W]: tap-major sampled values
    fold: torch.Tensor  # sparse [H_out*W_out, k*k*H*W]: sums per-tap responses


def _patch(k: int, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    h = k // 2
    a, b = np.meshgrid(np.arange(-h, h + 1), np.arange(-h, h + 1), indexing="ij")
    return a.ravel() * (math.pi / H), b.ravel() * (2 * math.pi / W)


def row_offsets(latitude: float, k: int, in_shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (row, column) offsets of the kernel taps centred at ``latitude``.

    Offsets are in input pixels relative to the centre; row offsets are
    measured from the centre's own fractional row.
    """
    H, W = in_shape
    dpsi, dlam = _patch(k, H, W)
    xyz = unit_vectors(dlam, dpsi) @ tilt_matrix(latitude).T
    lam, psi = vectors_to_angles(xyz)
    centre_row = (latitude / math.pi + 0.5) * H - 0.5
    rows = (psi / math.pi + 0.5) * H - 0.5 - centre_row
    cols = lam / (2 * math.pi) * W
    return rows, cols


@lru_cache(maxsize=64)
def build_sampling_grid(in_shape: tuple[int, int], k: int, stride: int = 1) -> SamplingGrid:
    """Sampling grid for a spherical conv reading ``in_shape`` with the given stride.

    Output pixels are the pixel centres of the ``(H/stride, W/stride)`` ERP
    grid, so every intermediate map stays a valid equirectangular image.
    """
    if k % 2 == 0 or k < 1:
        raise ValueError("kernel size must be odd")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    H, W = in_shape
    if H % stride or W % stride:
        raise ValueError(f"grid {in_shape} not divisible by stride {stride}")
    Ho, Wo = H // stride, W // stride
    lat_out = ((np.arange(Ho) + 0.5) / Ho - 0.5) * math.pi
    rows = np.empty((Ho, k * k))
    cols = np.empty((Ho, k * k))
    for r, lat in enumerate(lat_out):
        dr, dc = row_offsets(lat, k, in_shape)
        rows[r] = (lat / math.pi + 0.5) * H - 0.5 + dr
        cols[r] = dc
    # Output column c is centred at input column (c + 0.5) * stride - 0.5.  Split
    # the per-row offset into integer and fractional parts once so the weights
    # are identical for every column (exact shift covariance).
    base = cols + (stride - 1) / 2.0
    fl = np.floor(base)
    frac = base - fl
    shape = (Ho, k * k, Wo)
    r_all = np.broadcast_to(rows[:, :, None], shape)
    c_int = fl[:, :, None].astype(np.int64) + stride * np.arange(Wo)[None, None, :]
    f_all = np.broadcast_to(frac[:, :, None], shape)
    # Taps first: [k*k, Ho, Wo].
    r_all, c_int, f_all = (np.transpose(a, (1, 0, 2)).ravel() for a in (r_all, c_int, f_all))
    idx, wts = _corners(r_all, c_int, f_all, H, W)
    gather, fold = _sparse_operators(idx, wts, k * k, Ho * Wo, H * W)
    return SamplingGrid(in_shape, (Ho, Wo), k, stride, rows, cols, idx, wts, gather, fold)


def _sparse_operators(idx, wts, kk, n_out, n_in):
    m = idx.shape[1]  # kk * n_out
    rows = torch.arange(m).repeat(4)
    vals = wts.reshape(-1)
    gather = torch.sparse_coo_tensor(torch.stack([rows, idx.reshape(-1)]), vals, (m, n_in), check_invariants=True).coalesce()
    tap = rows // n_out
    fold = torch.sparse_coo_tensor(torch.stack([rows % n_out, tap * n_in + idx.reshape(-1)]), vals,
                                   (n_out, kk * n_in), check_invariants=True).coalesce()
    return gather, fold


def _corners(rows, c0, fc, H, W):
    rows = np.clip(rows, 0.0, H - 1)
    r0 = np.floor(rows)
    fr = rows - r0
    r0 = r0.astype(np.int64)
    r1 = np.minimum(r0 + 1, H - 1)
    c0 = c0 % W
    c1 = (c0 + 1) % W
    idx = np.stack([r0 * W + c0, r0 * W + c1, r1 * W + c0, r1 * W + c1])
    wts = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc])
    return torch.from_numpy(np.ascontiguousarray(idx)), torch.from_numpy(np.ascontiguousarray(wts))


def spconv2d(x: torch.Tensor, weight: torch.Tensor, grid: SamplingGrid,
             bias: torch.Tensor | None = None) -> torch.Tensor:
    """Spherical convolution of ``x`` ([C,H,W] or [B,C,H,W]) with ``weight`` [O,C,k,k]."""
    if tuple(x.shape[-2:]) != grid.in_shape:
        raise ValueError(f"input grid {tuple(x.shape[-2:])} does not match sampling grid {grid.in_shape}")
    if weight.shape[-1] != grid.k or weight.shape[1] != x.shape[-3]:
        raise ValueError("weight shape does not match input channels / grid kernel size")
    Ho, Wo = grid.out_shape
    kk = grid.k * grid.k
    O, C = weight.shape[:2]
    lead = x.shape[:-3]
    w = weight.reshape(O, C, kk)
    cols = x.reshape(-1, C, x.shape[-2] * x.shape[-1])  # [B, C, HW]
    B = cols.shape[0]
    if O < C:
        # mix channels per tap first, then one sparse pass sums the taps
        z = torch.einsum("ock,bcp->kpbo", w, cols).reshape(kk * cols.shape[-1], B * O)
        y = torch.sparse.mm(grid.fold, z).reshape(Ho * Wo, B, O).permute(1, 2, 0)
    else:
        s = torch.sparse.mm(grid.gather, cols.permute(2, 0, 1).reshape(-1, B * C))
        y = torch.einsum("ock,knbc->bon", w, s.reshape(kk, Ho * Wo, B, C))
    if bias is not None:
        y = y + bias[:, None]
    return y.reshape(*lead, O, Ho, Wo)


class SphericalKernel(nn.Module):
    """One shared weight set plus the per-latitude sampling grids it is applied on."""

    def __init__(self, in_channels: int, out_channels: int, k: int = 3, bias: bool = True,
                 generator: torch.Generator | None = None):
        super().__init__()
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.in_channels, self.out_channels, self.k = in_channels, out_channels, k
        bound = 1.0 / math.sqrt(in_channels * k * k)
        w = (torch.rand((out_channels, in_channels, k, k), generator=generator, dtype=nx.DTYPE) * 2 - 1) * bound
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(out_channels, dtype=nx.DTYPE)) if bias else None

    def forward(self, x: torch.Tensor, stride: int = 1) -> torch.Tensor:
        grid = build_sampling_grid(tuple(x.shape[-2:]), self.k, stride)
        return spconv2d(x, self.weight, grid, self.bias)


class SpConvLayer(nn.Module):
    """Spherical conv, optional batch norm, then an activation."""

    def __init__(self, in_channels: int, out_channels: int, k: int = 3, stride: int = 1,
                 batchnorm: bool = True, activation: str | None = "relu",
                 generator: torch.Generator | None = None):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        self.kernel = SphericalKernel(in_channels, out_channels, k, bias=not batchnorm, generator=generator)
        self.stride = stride
        self.activation = activation
        if batchnorm:
            self.gamma = nn.Parameter(torch.ones(out_channels, dtype=nx.DTYPE))
            self.beta = nn.Parameter(torch.zeros(out_channels, dtype=nx.DTYPE))
            self.register_buffer("running_mean", torch.zeros(out_channels, dtype=nx.DTYPE))
            self.register_buffer("running_var", torch.ones(out_channels, dtype=nx.DTYPE))
        else:
            self.gamma = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.kernel(x, self.stride)
        if self.gamma is not None:
            y = nx.batchnorm(y, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, eps=LAYER_BN_EPS)
        if self.activation == "relu":
            y = torch.relu(y)
        elif self.activation == "sigmoid":
            y = torch.sigmoid(y)
        elif self.activation == "tanh":
            y = torch.tanh(y)
        elif self.activation is not None:
            raise ValueError(f"unknown activation {self.activation!r}")
        return y


def shift_columns(x: torch.Tensor, shift: int) -> torch.Tensor:
    return torch.roll(x, shifts=shift, dims=-1)


def longitude_shift_equivariance(x: torch.Tensor, layer: nn.Module, shift: int) -> float:
    """Max abs difference between conv(shift(x)) and shift(conv(x))."""
    if getattr(layer, "stride", 1) != 1:
        raise ValueError("shift equivariance is exact only for stride 1")
    with torch.no_grad():
        a = layer(shift_columns(x, shift))
        b = shift_columns(layer(x), shift)
    return float((a - b).abs().max())
