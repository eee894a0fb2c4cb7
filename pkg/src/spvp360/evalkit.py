"""Losses and metrics: solid-angle weighted MSE, NSS / CC / AUC-Judd, tile-based
Jaccard accuracy with precision and recall, and head-movement classes."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np
import torch

from .fusion import region_bounds
from .sphere_geom import solid_angle_weights

VIEWED_THRESHOLD = 1e-6
DEFAULT_TILES = (8, 16)


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given input (zero variance, empty sets)."""


def _check_same_grid(p, g) -> None:
    if tuple(p.shape) != tuple(g.shape):
        raise ValueError(f"grid mismatch: {tuple(p.shape)} vs {tuple(g.shape)}")


def weighted_mse(p, g):
    """Solid-angle weighted squared error, ``sum(w (P-G)^2) / sum(w)``.

    Works on numpy arrays (returns float) and torch tensors (returns a
    differentiable scalar tensor).
    """
    _check_same_grid(p, g)
    w = solid_angle_weights(*p.shape[-2:])
    if isinstance(p, torch.Tensor) or isinstance(g, torch.Tensor):
        w = torch.as_tensor(w, dtype=torch.float64)
        p, g = torch.as_tensor(p, dtype=torch.float64), torch.as_tensor(g, dtype=torch.float64)
        return (w * (p - g) ** 2).sum() / w.sum()
    return float(np.sum(w * (np.asarray(p) - np.asarray(g)) ** 2) / np.sum(w))


def sequence_loss(preds: Sequence, gts: Sequence):
    """Mean of :func:`weighted_mse` over R frames."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground-truth frames")
    if len(preds) == 0:
        raise ValueError("need at least one frame")
    total = weighted_mse(preds[0], gts[0])
    for p, g in zip(preds[1:], gts[1:]):
        total = total + weighted_mse(p, g)
    return total / len(preds)


def _fixation_index(fixations, shape) -> tuple[np.ndarray, np.ndarray]:
    fx = np.asarray(fixations, dtype=np.int64).reshape(-1, 2)
    if len(fx) == 0:
        raise UndefinedMetricError("at least one fixation is required")
    H, W = shape
    if (fx[:, 0] < 0).any() or (fx[:, 0] >= H).any() or (fx[:, 1] < 0).any() or (fx[:, 1] >= W).any():
        raise ValueError("fixation outside the map")
    return fx[:, 0], fx[:, 1]


def nss(p, fixations) -> float:
    """Mean standardised saliency at fixation pixels ``(row, col)`` (population std)."""
    p = np.asarray(p, dtype=np.float64)
    std = p.std()
    if not std > 0:
        raise UndefinedMetricError("NSS is undefined for a constant map")
    r, c = _fixation_index(fixations, p.shape)
    return float(np.mean((p[r, c] - p.mean()) / std))


def cc(p, g) -> float:
    """Pearson correlation between two maps."""
    p = np.asarray(p, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    _check_same_grid(p, g)
    a, b = p - p.mean(), g - g.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        raise UndefinedMetricError("CC is undefined for a constant map")
    return float(a @ b) / den


def auc_judd(p, fixations) -> float:
    """AUC-Judd: thresholds at fixated values, every other pixel is a negative."""
    p = np.asarray(p, dtype=np.float64)
    r, c = _fixation_index(fixations, p.shape)
    fixmap = np.zeros(p.shape, dtype=bool)
    fixmap[r, c] = True
    pos = p[fixmap]
    n_pos, n_all = pos.size, p.size
    n_neg = n_all - n_pos
    if n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one non-fixated pixel")
    thresholds = np.sort(pos)[::-1]
    flat = np.sort(p.ravel())
    pos_sorted = np.sort(pos)
    tp = np.zeros(n_pos + 2)
    fp = np.zeros(n_pos + 2)
    tp[-1] = fp[-1] = 1.0
    for i, t in enumerate(thresholds, start=1):
        above = n_all - np.searchsorted(flat, t, side="left")
        # tied fixations all clear the threshold together
        tp_count = n_pos - np.searchsorted(pos_sorted, t, side="left")
        tp[i] = tp_count / n_pos
        fp[i] = (above - tp_count) / n_neg
    return float(np.trapezoid(tp, fp))


auc = auc_judd


@dataclass(frozen=True)
class TileScores:
    accuracy: float
    precision: float
    recall: float

    def __iter__(self):
        return iter((self.accuracy, self.precision, self.recall))


def viewed_tiles(p, tiles: tuple[int, int] = DEFAULT_TILES, threshold: float = VIEWED_THRESHOLD) -> np.ndarray:
    """Boolean [rows, cols] mask of tiles holding any value above ``threshold``."""
    p = np.asarray(p)
    rows, cols = tiles
    H, W = p.shape
    if rows < 1 or cols < 1 or rows > H or cols > W:
        raise ValueError(f"tile grid {tiles} does not fit a {H}x{W} map")
    out = np.zeros((rows, cols), dtype=bool)
    for i, (r0, r1) in enumerate(region_bounds(H, rows)):
        for j, (c0, c1) in enumerate(region_bounds(W, cols)):
            out[i, j] = bool(np.any(p[r0:r1, c0:c1] > threshold))
    return out


def jaccard_scores(pred: np.ndarray, gt: np.ndarray) -> TileScores:
    """Accuracy (IoU), precision and recall of two viewed-tile masks."""
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    n_gt = int(gt.sum())
    if n_gt == 0:
        raise UndefinedMetricError("ground truth has no viewed tiles")
    inter = int((pred & gt).sum())
    union = int((pred | gt).sum())
    n_pred = int(pred.sum())
    precision = inter / n_pred if n_pred else 0.0
    return TileScores(inter / union, precision, inter / n_gt)


def tile_metrics(p, g, tiles: tuple[int, int] = DEFAULT_TILES,
                 threshold: float = VIEWED_THRESHOLD) -> TileScores:
    _check_same_grid(np.asarray(p), np.asarray(g))
    return jaccard_scores(viewed_tiles(p, tiles, threshold), viewed_tiles(g, tiles, threshold))


class Level(IntEnum):
    Less = 0
    Middle = 1
    More = 2


LON_THRESHOLDS = (0.3, 0.65)
LAT_THRESHOLDS = (0.1, 0.3)


@dataclass(frozen=True)
class HeadMoveClass:
    label: Level
    mean_lon_deg: float
    mean_lat_deg: float


def _level(value: float, bounds: tuple[float, float]) -> Level:
    lo, hi = bounds
    if value > hi:
        return Level.More
    if value >= lo:
        return Level.Middle
    return Level.Less


def combine_levels(lon: Level, lat: Level) -> Level:
    if abs(lon - lat) <= 1:
        return max(lon, lat)
    return Level.Middle


def classify_head_movement(mean_lon_deg: float, mean_lat_deg: float) -> Level:
    return combine_levels(_level(mean_lon_deg, LON_THRESHOLDS), _level(mean_lat_deg, LAT_THRESHOLDS))


def head_move_classify(trace) -> HeadMoveClass:
    """Classify a gaze trace by its mean per-sample longitude/latitude change."""
    lam = np.array([p.lam for p in trace.latlons()])
    psi = np.array([p.psi for p in trace.latlons()])
    if lam.size < 2:
        raise ValueError("head-movement classification needs at least two samples")
    dlam = np.angle(np.exp(1j * np.diff(lam)))  # wrap across the seam
    lon = float(np.degrees(np.abs(dlam)).mean())
    lat = float(np.degrees(np.abs(np.diff(psi))).mean())
    return HeadMoveClass(classify_head_movement(lon, lat), lon, lat)
