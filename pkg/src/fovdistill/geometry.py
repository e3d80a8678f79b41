"""Equirectangular panorama geometry: yaw shifts, masks and the ground-plane warp.

Panoramas are (H, W, C) arrays. Column c looks along azimuth
360 * c / W - 180 degrees (0 = forward, clockwise positive); row r looks
along pitch 90 - 180 * r / H degrees (row 0 = zenith).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .numerics import Tensor, grid_sample

CAMERA_HEIGHT = 1.6


def _check_pano(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3:
        raise InvalidArgument(f"panorama must be (H, W, C), got shape {p.shape}")
    return p


def yaw_to_shift(theta: float, width: int) -> int:
    if not math.isfinite(theta):
        raise InvalidArgument(f"non-finite yaw {theta}")
    return int(round((theta % 360.0) * width / 360.0)) % width


def rotate_panorama(p: np.ndarray, theta: float) -> np.ndarray:
    """Circular horizontal shift: out[:, c] = p[:, (c + round(theta * W / 360)) % W]."""
    p = _check_pano(p)
    return np.roll(p, -yaw_to_shift(theta, p.shape[1]), axis=1)


@dataclass(frozen=True)
class FovMask:
    fov_deg: float
    center_deg: float
    columns: np.ndarray  # (W,) of 0/1

    def full(self, height: int) -> np.ndarray:
        return np.broadcast_to(self.columns, (height, self.columns.size)).copy()


def build_fov_mask(fov_deg: float, center_deg: float, width: int) -> FovMask:
    """Contiguous band of round(W * fov / 360) columns centred near ``center_deg``."""
    if not (0 < fov_deg <= 360):
        raise InvalidArgument(f"fov_deg must be in (0, 360], got {fov_deg}")
    if width <= 0:
        raise InvalidArgument("width must be positive")
    n = int(round(width * fov_deg / 360.0))
    cols = np.zeros(width)
    if n >= width:
        cols[:] = 1.0
    elif n > 0:
        center_col = int(round((center_deg + 180.0) * width / 360.0)) % width
        start = center_col - n // 2
        cols[np.arange(start, start + n) % width] = 1.0
    return FovMask(float(fov_deg), float(center_deg), cols)


def _mask_2d(mask, shape_hw) -> np.ndarray:
    m = np.asarray(mask.full(shape_hw[0]) if isinstance(mask, FovMask) else mask, dtype=np.float64)
    if m.ndim == 1:
        m = np.broadcast_to(m, (shape_hw[0], m.size))
    if m.shape != tuple(shape_hw):
        raise InvalidArgument(f"mask shape {m.shape} does not match panorama {tuple(shape_hw)}")
    return m


def apply_mask(p: np.ndarray, mask) -> np.ndarray:
    """Element-wise product; a 1-D or FovMask column mask is broadcast down rows."""
    p = _check_pano(p)
    m = _mask_2d(mask, p.shape[:2])
    return p * m[:, :, None]


def random_patch_mask(rng: np.random.Generator, height: int, width: int, patch: int,
                      keep_ratio: float) -> np.ndarray:
    if patch <= 0 or height % patch or width % patch:
        raise InvalidArgument(f"patch {patch} must divide {height}x{width}")
    if not (0 < keep_ratio <= 1):
        raise InvalidArgument(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    cells = (rng.random((height // patch, width // patch)) < keep_ratio).astype(np.float64)
    return np.kron(cells, np.ones((patch, patch)))


def max_activation_mask(p: np.ndarray, saliency: np.ndarray, drop_ratio: float) -> np.ndarray:
    """Zero the ``drop_ratio`` fraction of pixels with the highest saliency.

    Ties go to the lower row-major index: among equal scores the earlier
    pixel ranks lower and is kept first.
    """
    p = _check_pano(p)
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.shape != p.shape[:2]:
        raise InvalidArgument(f"saliency shape {saliency.shape} != panorama {p.shape[:2]}")
    if not (0 <= drop_ratio < 1):
        raise InvalidArgument(f"drop_ratio must be in [0, 1), got {drop_ratio}")
    flat = saliency.ravel()
    n_drop = int(round(drop_ratio * flat.size))
    mask = np.ones(flat.size)
    if n_drop:
        order = np.lexsort((np.arange(flat.size), flat))  # ascending score, then index
        mask[order[flat.size - n_drop:]] = 0.0
    return mask.reshape(saliency.shape)


@functools.lru_cache(maxsize=32)
def bev_sample_grid(pano_h: int, pano_w: int, height: float, extent: float, size: int):
    """Fractional (row, col) panorama indices for every BEV pixel."""
    if height <= 0 or extent <= 0 or size < 2 or pano_h < 2 or pano_w < 1:
        raise InvalidArgument("invalid BEV dimensions")
    idx = np.arange(size, dtype=np.float64)
    x = (idx[None, :] - (size - 1) / 2) * extent / size
    y = ((size - 1) / 2 - idx[:, None]) * extent / size
    x, y = np.broadcast_arrays(x, y)
    d = np.hypot(x, y)
    phi = np.degrees(np.arctan2(x, y))
    pitch = -np.degrees(np.arctan2(height, d))
    rows = (90.0 - pitch) * pano_h / 180.0
    cols = (phi + 180.0) * pano_w / 360.0
    at_camera = d == 0
    rows[at_camera] = pano_h - 1
    cols[at_camera] = 0.0
    rows = np.minimum(rows, pano_h - 1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def spherical_to_bev(p, height: float = CAMERA_HEIGHT, extent: float = 35.0, size: int = 64):
    """Project a panorama onto the ground plane as a (size, size, C) top-down image.

    The camera sits at the grid centre and its forward heading points up.
    Accepts a numpy panorama (returns numpy) or a (C, H, W) / (N, C, H, W)
    Tensor (returns a differentiable Tensor of matching layout).
    """
    if isinstance(p, Tensor):
        h_, w_ = p.shape[-2:]
        rows, cols = bev_sample_grid(h_, w_, float(height), float(extent), int(size))
        return grid_sample(p, rows, cols, wrap_cols=True)
    p = _check_pano(p)
    rows, cols = bev_sample_grid(p.shape[0], p.shape[1], float(height), float(extent), int(size))
    chw = Tensor(np.transpose(p, (2, 0, 1)))
    return np.transpose(grid_sample(chw, rows, cols, wrap_cols=True).data, (1, 2, 0))
