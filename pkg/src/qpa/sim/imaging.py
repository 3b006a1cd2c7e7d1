"""Affine image transforms shared by the benign near-duplicate generator
and the query-blinding strategy."""

from __future__ import annotations

import math

import numpy as np

from .. import kernels


def affine_inverse_matrix(
    width: int,
    height: int,
    angle_deg: float,
    shift_x_frac: float,
    shift_y_frac: float,
    zoom: float,
) -> np.ndarray:
    """Inverse map (output pixel -> source pixel) for rotate/shift/zoom
    about the image center."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    # Forward: translate center -> rotate -> scale -> translate back + shift.
    # Inverse: undo shift, translate center, inverse-scale, inverse-rotate.
    tx = shift_x_frac * width
    ty = shift_y_frac * height
    inv_scale = 1.0 / zoom
    m = np.empty((2, 3), dtype=np.float64)
    m[0, 0] = cos_t * inv_scale
    m[0, 1] = sin_t * inv_scale
    m[1, 0] = -sin_t * inv_scale
    m[1, 1] = cos_t * inv_scale
    ox = -(cx + tx)
    oy = -(cy + ty)
    m[0, 2] = m[0, 0] * ox + m[0, 1] * oy + cx
    m[1, 2] = m[1, 0] * ox + m[1, 1] * oy + cy
    return m


def warp_plane(img: np.ndarray, inv_mat: np.ndarray) -> np.ndarray:
    """Bilinear warp of one float64 plane with edge clamping."""
    return kernels.affine_warp(np.ascontiguousarray(img, dtype=np.float64), inv_mat)


def warp_uint8(arr: np.ndarray, inv_mat: np.ndarray) -> np.ndarray:
    """Warp a (H, W) or (H, W, C) uint8 array, rounding back to uint8."""
    if arr.ndim == 2:
        out = warp_plane(arr.astype(np.float64), inv_mat)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    planes = [warp_plane(arr[:, :, c].astype(np.float64), inv_mat) for c in range(arr.shape[2])]
    out = np.stack(planes, axis=2)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
