"""Equirectangular (ERP) geometry: orientation conversions, pixel mapping,
per-pixel solid angles and Gaussian FoV heatmaps.

Conventions used throughout the package:

* ``lam`` is the horizontal (longitude-like) angle, mapped to the column axis
  with ``u = (lam / 2pi + 0.5) * U``.
* ``psi`` is the vertical (latitude-like) angle, mapped to the row axis with
  ``v = (psi / pi + 0.5) * V``.  Row 0 is ``psi = -pi/2``.
* ERP maps are 2-D float64 numpy arrays of shape ``(V, U)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FOV_WIDTH_DEG = 110.0
FOV_HEIGHT_DEG = 90.0


@dataclass(frozen=True)
class EulerOrientation:
    alpha: float  # cross-roll
    beta: float  # pitch
    gamma: float  # yaw


@dataclass(frozen=True)
class LatLon:
    lam: float
    psi: float


@dataclass(frozen=True)
class FovRect:
    center: LatLon
    width_deg: float = FOV_WIDTH_DEG
    height_deg: float = FOV_HEIGHT_DEG


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def euler_to_latlon(o: EulerOrientation) -> LatLon:
    """Convert a head orientation to ERP angles.

    ``lam = asin(beta / |o|)`` and ``psi = atan2(-gamma, alpha)``.  For
    orientations facing the front hemisphere (``alpha >= 0``) ``psi`` already
    lies in [-pi/2, pi/2].  Rear-facing orientations are folded over the
    vertical edge: ``psi -> +-pi - psi`` and ``lam -> +-pi - lam``, which keeps
    ``psi`` inside the row range and moves the point into the outer halves of
    the panorama instead of losing the hemisphere.
    """
    n = math.sqrt(o.alpha**2 + o.beta**2 + o.gamma**2)
    if not n > 0 or not math.isfinite(n):
        raise ValueError("orientation vector must have a finite, nonzero norm")
    lam = math.asin(max(-1.0, min(1.0, o.beta / n)))
    psi = math.atan2(-o.gamma, o.alpha)
    if abs(psi) > math.pi / 2:
        psi = math.copysign(math.pi, psi) - psi
        lam = (math.pi if lam >= 0 else -math.pi) - lam
    return LatLon(lam, psi)


def latlon_to_euler(p: LatLon) -> EulerOrientation:
    """Unit-norm orientation whose :func:`euler_to_latlon` image is ``p``."""
    lam, psi = wrap_angle(p.lam), p.psi
    if abs(lam) > math.pi / 2:
        lam = math.copysign(math.pi, lam) - lam
        psi = (math.pi if psi >= 0 else -math.pi) - psi
    c = math.cos(lam)
    return EulerOrientation(alpha=c * math.cos(psi), beta=math.sin(lam), gamma=-c * math.sin(psi))


def latlon_to_pixel(p: LatLon, width: int, height: int) -> tuple[int, int]:
    """Integer pixel ``(u, v)`` containing ``p``.

    Longitudes beyond a full turn wrap; the closed image edge (``lam = pi`` or
    ``psi = pi/2``) clamps onto the last column/row.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be >= 1")
    lam = p.lam
    if abs(lam) > math.pi:
        lam = wrap_angle(lam)
    u = math.floor((lam / (2 * math.pi) + 0.5) * width)
    v = math.floor((p.psi / math.pi + 0.5) * height)
    return min(max(u, 0), width - 1), min(max(v, 0), height - 1)


def pixel_to_latlon(u: float, v: float, width: int, height: int) -> LatLon:
    """Angles of the pixel centre ``(u, v)`` (fractional indices allowed)."""
    return LatLon(((u + 0.5) / width - 0.5) * 2 * math.pi, ((v + 0.5) / height - 0.5) * math.pi)


def row_latitudes(height: int) -> np.ndarray:
    return ((np.arange(height) + 0.5) / height - 0.5) * np.pi


def col_longitudes(width: int) -> np.ndarray:
    return ((np.arange(width) + 0.5) / width - 0.5) * 2 * np.pi


def solid_angle_weights(height: int, width: int) -> np.ndarray:
    """Solid angle of every pixel divided by 4pi; the grid sums to 1."""
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be >= 1")
    edges = (np.arange(height + 1) / height - 0.5) * np.pi
    band = np.diff(np.sin(edges))  # exact cell area per unit longitude
    theta = (2 * np.pi / width) * band
    return np.repeat((theta / (4 * np.pi))[:, None], width, axis=1)


def fov_extent_pixels(rect: FovRect, height: int, width: int) -> tuple[float, float, float, float]:
    """(half_width, half_height, sigma_x, sigma_y) of ``rect`` in pixels."""
    px_per_deg_x = width / 360.0
    px_per_deg_y = height / 180.0
    return (
        rect.width_deg / 2 * px_per_deg_x,
        rect.height_deg / 2 * px_per_deg_y,
        rect.width_deg / 4 * px_per_deg_x,
        rect.height_deg / 4 * px_per_deg_y,
    )


def gaussian_fov_heatmap(rect: FovRect, grid: tuple[int, int]) -> np.ndarray:
    """Gaussian intensity inside the (longitude-wrapped) FoV rectangle, 0 outside.

    The Gaussian peaks at 1 on the gaze pixel; sigma is a quarter of the FoV
    extent on each axis.
    """
    height, width = grid
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be >= 1")
    if rect.width_deg <= 0 or rect.height_deg <= 0:
        raise ValueError("FoV extent must be positive")
    cu, cv = latlon_to_pixel(rect.center, width, height)
    hw, hh, sx, sy = fov_extent_pixels(rect, height, width)
    du = (np.arange(width) - cu + width / 2) % width - width / 2
    dv = np.arange(height) - cv
    inside = (np.abs(dv)[:, None] <= hh) & (np.abs(du)[None, :] <= hw)
    g = np.exp(-0.5 * (dv[:, None] / sy) ** 2 - 0.5 * (du[None, :] / sx) ** 2)
    return np.where(inside, g, 0.0)


def unit_vectors(lam: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Cartesian unit vectors (x toward lam=psi=0, y toward lam=pi/2, z toward psi=pi/2)."""
    c = np.cos(psi)
    return np.stack([c * np.cos(lam), c * np.sin(lam), np.sin(psi)], axis=-1)


def vectors_to_angles(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam = np.arctan2(xyz[..., 1], xyz[..., 0])
    psi = np.arcsin(np.clip(xyz[..., 2], -1.0, 1.0))
    return lam, psi


def tilt_matrix(angle: float) -> np.ndarray:
    """Rotation about the y axis carrying (lam=0, psi=0) to (lam=0, psi=angle)."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def angular_distance(lam1, psi1, lam2, psi2):
    """Great-circle distance (radians), broadcasting over numpy inputs."""
    s = np.sin(psi1) * np.sin(psi2) + np.cos(psi1) * np.cos(psi2) * np.cos(lam1 - lam2)
    return np.arccos(np.clip(s, -1.0, 1.0))
