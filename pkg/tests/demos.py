"""Shared scenario builders for the acceptance and module tests."""
from __future__ import annotations

import math

import numpy as np
import torch

from spvp360 import numerics as nx
from spvp360 import sphere_geom as sg
from spvp360.spconv import build_sampling_grid, spconv2d


def blob_map(grid, lam, psi, sigma):
    H, W = grid
    lon, lat = np.meshgrid(sg.col_longitudes(W), sg.row_latitudes(H))
    d = sg.angular_distance(lon, lat, lam, psi)
    return np.exp(-0.5 * (d / sigma) ** 2)


def rotate_back(resp: torch.Tensor, angle: float) -> torch.Tensor:
    """Resample a response computed on a tilted input back to the equator frame."""
    H, W = resp.shape[-2:]
    lon, lat = np.meshgrid(sg.col_longitudes(W), sg.row_latitudes(H))
    lam, psi = sg.vectors_to_angles(sg.unit_vectors(lon, lat) @ sg.tilt_matrix(angle).T)
    rows = (psi / np.pi + 0.5) * H - 0.5
    cols = (lam / (2 * np.pi) + 0.5) * W - 0.5
    return nx.bilinear_sample(resp, np.stack([rows.ravel(), cols.ravel()], 1)).reshape(resp.shape)


def correlation(a, b) -> float:
    a = np.ravel(a) - np.mean(a)
    b = np.ravel(b) - np.mean(b)
    return float(a @ b / math.sqrt(float(a @ a) * float(b @ b)))


def weight_sharing_scores(seed=0, grid=(32, 64), sigma_deg=8.0, tilt_deg=60.0, channels=4):
    """Mean back-rotated response correlation for spherical and planar convs.

    A blob at the equator and the same blob moved to ``tilt_deg`` latitude are
    filtered with one random 3x3 kernel; the tilted response is rotated back
    and compared with the equator response.
    """
    sigma, tilt = math.radians(sigma_deg), math.radians(tilt_deg)
    w = torch.randn(channels, 1, 3, 3, generator=torch.Generator().manual_seed(seed), dtype=nx.DTYPE)
    x0 = torch.tensor(blob_map(grid, 0.0, 0.0, sigma))[None]
    x1 = torch.tensor(blob_map(grid, 0.0, tilt, sigma))[None]
    g = build_sampling_grid(tuple(grid), 3, 1)
    s0, s1 = spconv2d(x0, w, g), rotate_back(spconv2d(x1, w, g), tilt)
    p0, p1 = nx.conv2d(x0, w, padding="wrap"), rotate_back(nx.conv2d(x1, w, padding="wrap"), tilt)
    sph = np.mean([correlation(s0[i].numpy(), s1[i].numpy()) for i in range(channels)])
    pla = np.mean([correlation(p0[i].numpy(), p1[i].numpy()) for i in range(channels)])
    return float(sph), float(pla)
