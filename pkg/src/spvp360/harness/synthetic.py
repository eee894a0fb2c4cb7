"""Synthetic 360 scenes with known ground truth.

A scene is a short ERP clip with one or two coloured Gaussian blobs on a
faint static background.  Simulated viewers follow a blob with a persistent
personal offset plus AR(1) jitter, so every user's FoV (and the saliency
density around the blob) is known exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..sphere_geom import (FovRect, LatLon, angular_distance, col_longitudes, euler_to_latlon,
                           gaussian_fov_heatmap, latlon_to_euler, latlon_to_pixel, row_latitudes)
from .traces import GazeTrace

GENERATORS = ("drifting-blob", "two-blob", "static")
BLOB_COLORS = ((1.0, 0.35, 0.15), (0.15, 0.55, 1.0))


@dataclass(frozen=True)
class SyntheticScene:
    generator: str = "drifting-blob"
    frames: int = 200
    grid: tuple[int, int] = (64, 128)
    fps: float = 30.0
    users: int = 20
    start_lon_deg: float = 0.0
    blob_lat_deg: float = 10.0
    drift_deg_per_frame: float = -1.5  # negative drifts left (decreasing longitude)
    lat_swing_deg: float = 8.0  # slow sinusoidal latitude wobble amplitude
    blob_sigma_deg: float = 8.0
    saliency_sigma_deg: float = 8.0
    saliency_cutoff: float = 2.5  # density is exactly 0 beyond this many sigmas
    offset_lon_deg: float = 12.0
    offset_lat_deg: float = 6.0
    jitter_deg: float = 2.0
    jitter_rho: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")
        if self.frames < 2 or self.users < 1 or self.fps <= 0:
            raise ValueError("need >= 2 frames, >= 1 user and a positive frame rate")

    def with_(self, **kw) -> "SyntheticScene":
        return replace(self, **kw)


@dataclass
class Scene:
    """Frames plus gaze traces; synthetic scenes also carry saliency targets."""

    frames: np.ndarray  # [F, 3, H, W] in [0, 1]
    traces: list[GazeTrace]
    fps: float
    times: list[float] | None = None  # frame timestamps; defaults to index / fps
    saliency: np.ndarray | None = None  # [F, H, W] in [0, 1]
    spec: SyntheticScene | None = None
    blobs: np.ndarray | None = None  # [F, n_blobs, 2] (lam, psi) radians
    _heatmaps: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.times is None:
            self.times = [f / self.fps for f in range(self.frames.shape[0])]
        if len(self.times) != self.frames.shape[0]:
            raise ValueError("one timestamp per frame is required")

    @property
    def grid(self) -> tuple[int, int]:
        return tuple(self.frames.shape[-2:])

    def __len__(self) -> int:
        return self.frames.shape[0]

    def timestamp(self, frame: int) -> float:
        return self.times[frame]

    def sample_index(self, user: int, frame: int) -> int:
        """Index of the user's latest gaze sample at or before ``frame``."""
        return self.traces[user].index_at(self.times[frame])

    def gaze(self, user: int, frame: int) -> LatLon:
        return euler_to_latlon(self.traces[user].orientations[self.sample_index(user, frame)])

    def user_heatmap(self, user: int, frame: int) -> np.ndarray:
        key = (user, self.sample_index(user, frame))
        if key not in self._heatmaps:
            o = self.traces[user].orientations[key[1]]
            self._heatmaps[key] = gaussian_fov_heatmap(FovRect(euler_to_latlon(o)), self.grid)
        return self._heatmaps[key]


def _background(rng: np.random.Generator, grid: tuple[int, int]) -> np.ndarray:
    """Faint smooth texture, periodic in longitude."""
    H, W = grid
    lam = col_longitudes(W)[None, :]
    psi = row_latitudes(H)[:, None]
    bg = np.full((3, H, W), 0.3)
    for c in range(3):
        for _ in range(3):
            k = rng.integers(1, 4)
            m = rng.uniform(0.5, 3.0)
            ph = rng.uniform(0, 2 * np.pi, size=2)
            bg[c] += 0.03 * np.sin(k * lam + ph[0]) * np.cos(m * psi + ph[1])
    return bg


def _blob_path(spec: SyntheticScene) -> np.ndarray:
    F = spec.frames
    t = np.arange(F)
    drift = 0.0 if spec.generator == "static" else spec.drift_deg_per_frame
    swing = 0.0 if spec.generator == "static" else spec.lat_swing_deg
    lon = spec.start_lon_deg + drift * t
    lat = spec.blob_lat_deg + swing * np.sin(2 * np.pi * t / max(F, 1))
    paths = [np.stack([lon, lat], axis=-1)]
    if spec.generator == "two-blob":
        lon2 = spec.start_lon_deg + 180.0 - drift * t
        lat2 = -spec.blob_lat_deg - swing * np.sin(2 * np.pi * t / max(F, 1))
        paths.append(np.stack([lon2, lat2], axis=-1))
    deg = np.stack(paths, axis=1)  # [F, n, 2]
    lam = (np.radians(deg[..., 0]) + np.pi) % (2 * np.pi) - np.pi
    return np.stack([lam, np.radians(deg[..., 1])], axis=-1)


def generate_scene(spec: SyntheticScene | None = None, **kw) -> Scene:
    """Render frames, saliency densities and user traces for ``spec``."""
    spec = spec or SyntheticScene()
    if kw:
        spec = replace(spec, **kw)
    rng = np.random.default_rng(spec.seed)
    H, W = spec.grid
    blobs = _blob_path(spec)
    n_blobs = blobs.shape[1]
    bg = _background(rng, spec.grid)
    lam = col_longitudes(W)[None, :]
    psi = row_latitudes(H)[:, None]
    sig_b = math.radians(spec.blob_sigma_deg)
    sig_s = math.radians(spec.saliency_sigma_deg)
    frames = np.empty((spec.frames, 3, H, W))
    saliency = np.zeros((spec.frames, H, W))
    for f in range(spec.frames):
        img = bg.copy()
        for b in range(n_blobs):
            d = angular_distance(lam, psi, blobs[f, b, 0], blobs[f, b, 1])
            a = np.exp(-0.5 * (d / sig_b) ** 2)
            color = np.asarray(BLOB_COLORS[b % len(BLOB_COLORS)])[:, None, None]
            img = img * (1 - a) + color * a
            s = np.where(d <= spec.saliency_cutoff * sig_s, np.exp(-0.5 * (d / sig_s) ** 2), 0.0)
            saliency[f] = np.maximum(saliency[f], s)
        frames[f] = img
    times = [f / spec.fps for f in range(spec.frames)]
    traces = []
    for u in range(spec.users):
        b = u % n_blobs
        off = np.radians([rng.normal(0, spec.offset_lon_deg), rng.normal(0, spec.offset_lat_deg)])
        jit = np.zeros(2)
        scale = math.radians(spec.jitter_deg) * math.sqrt(1 - spec.jitter_rho**2)
        orients = []
        for f in range(spec.frames):
            jit = spec.jitter_rho * jit + rng.normal(0, scale, size=2)
            lon = blobs[f, b, 0] + off[0] + jit[0]
            lat = float(np.clip(blobs[f, b, 1] + off[1] + jit[1], -math.radians(80), math.radians(80)))
            orients.append(latlon_to_euler(LatLon(float(lon), lat)))
        traces.append(GazeTrace(f"u{u:03d}", list(times), orients))
    return Scene(frames, traces, spec.fps, times, saliency, spec, blobs)


def fixation_pixels(scene: Scene, users, frame: int) -> list[tuple[int, int]]:
    """(row, col) gaze pixels of ``users`` at ``frame``."""
    H, W = scene.grid
    out = []
    for u in users:
        c, r = latlon_to_pixel(scene.gaze(u, frame), W, H)
        out.append((r, c))
    return out
