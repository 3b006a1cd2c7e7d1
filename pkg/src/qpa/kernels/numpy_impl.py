"""Pure-numpy implementations of the hot kernels.

These are the fallback path when numba is disabled or unavailable. Every
function here is the reference for its numba twin: identical arithmetic,
identical accumulation order, so the two paths agree bit-for-bit.
"""

from __future__ import annotations

import numpy as np

FNV32_BASIS = np.uint32(2166136261)
FNV32_PRIME = np.uint32(16777619)


def gaussian_blur(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """5x5 convolution with edge-replicated borders, float64.

    Taps accumulate in (ky, kx) order so the result matches the scalar loop.
    """
    h, w = img.shape
    padded = np.pad(img, 2, mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for ky in range(5):
        for kx in range(5):
            out += kern[ky, kx] * padded[ky : ky + h, kx : kx + w]
    return out


def lbp_codes(img: np.ndarray) -> np.ndarray:
    """8-neighbor LBP code per interior pixel, radius 1.

    Bit k set when neighbor k >= center; neighbors clockwise from top-left.
    """
    c = img[1:-1, 1:-1]
    code = np.zeros(c.shape, dtype=np.uint8)
    neighbors = (
        (img[0:-2, 0:-2], 1),
        (img[0:-2, 1:-1], 2),
        (img[0:-2, 2:], 4),
        (img[1:-1, 2:], 8),
        (img[2:, 2:], 16),
        (img[2:, 1:-1], 32),
        (img[2:, 0:-2], 64),
        (img[1:-1, 0:-2], 128),
    )
    for nb, bit in neighbors:
        code |= np.where(nb >= c, np.uint8(bit), np.uint8(0))
    return code


def block_histogram_hashes(codes: np.ndarray, grid: int, seed: int) -> np.ndarray:
    """Per-block 256-bin LBP histogram, 4-bit quantized, FNV-1a hashed.

    Blocks partition the code map into grid x grid cells by proportional
    boundaries; output is uint32 hashes in row-major block order.
    """
    h, w = codes.shape
    out = np.empty(grid * grid, dtype=np.uint32)
    basis = (int(FNV32_BASIS) ^ (seed & 0xFFFFFFFF)) & 0xFFFFFFFF
    prime = int(FNV32_PRIME)
    for by in range(grid):
        r0, r1 = by * h // grid, (by + 1) * h // grid
        for bx in range(grid):
            c0, c1 = bx * w // grid, (bx + 1) * w // grid
            block = codes[r0:r1, c0:c1]
            npix = block.size
            hist = np.bincount(block.ravel(), minlength=256)
            quant = (hist * 16) // (npix + 1)
            acc = basis
            for q in quant:
                acc = ((acc ^ int(q)) * prime) & 0xFFFFFFFF
            out[by * grid + bx] = acc
    return out


def fnv_window_hashes(data: np.ndarray, window: int, seed: int) -> np.ndarray:
    """FNV-1a over every length-`window` byte window (stride 1), uint32.

    All windows advance in lockstep: one vectorized pass per byte offset.
    """
    n = data.shape[0] - window + 1
    basis = np.uint32((int(FNV32_BASIS) ^ (seed & 0xFFFFFFFF)) & 0xFFFFFFFF)
    hashes = np.full(n, basis, dtype=np.uint32)
    src = data.astype(np.uint32)
    for j in range(window):
        hashes = (hashes ^ src[j : j + n]) * FNV32_PRIME
    return hashes


def count_equal_rows(stored: np.ndarray, n: int, query: np.ndarray) -> np.ndarray:
    """Positionwise match counts of `query` against the first n stored rows."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return (stored[:n] == query[None, :]).sum(axis=1, dtype=np.int64)


def intersect_count_rows(
    stored: np.ndarray, lengths: np.ndarray, n: int, query: np.ndarray
) -> np.ndarray:
    """Set-intersection sizes of sorted `query` against the first n stored rows.

    Rows hold ascending distinct values in their first lengths[i] slots,
    padded with -1.
    """
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        row = stored[i, : lengths[i]]
        out[i] = np.intersect1d(row, query, assume_unique=True).shape[0]
    return out


def pairwise_nn_positionwise(feats: np.ndarray) -> np.ndarray:
    """For each row, the max positionwise match count against all other rows."""
    n = feats.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        counts = (feats == feats[i][None, :]).sum(axis=1, dtype=np.int64)
        counts[i] = -1
        out[i] = counts.max()
    return out


def pairwise_nn_set(feats: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """For each row, the max set similarity (|a & b| / max(|a|, |b|))
    against all other rows."""
    n = feats.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        counts = intersect_count_rows(feats, lengths, n, feats[i, : lengths[i]])
        denom = np.maximum(np.maximum(lengths[:n], lengths[i]), 1)
        sims = counts / denom
        sims[i] = -1.0
        out[i] = sims.max()
    return out


def affine_warp(img: np.ndarray, inv_mat: np.ndarray) -> np.ndarray:
    """Warp by the inverse affine map with bilinear sampling, edge clamp."""
    h, w = img.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx = inv_mat[0, 0] * xs + inv_mat[0, 1] * ys + inv_mat[0, 2]
    sy = inv_mat[1, 0] * xs + inv_mat[1, 1] * ys + inv_mat[1, 2]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    x1i = np.clip(x0i + 1, 0, w - 1)
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    y1i = np.clip(y0i + 1, 0, h - 1)
    v00 = img[y0i, x0i]
    v01 = img[y0i, x1i]
    v10 = img[y1i, x0i]
    v11 = img[y1i, x1i]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bot
