"""Numba-compiled twins of the numpy kernels.

Same arithmetic, same accumulation order as numpy_impl: the two paths
must agree bit-for-bit (no fastmath, so no FMA contraction).
"""

from __future__ import annotations

import numpy as np
from numba import njit

FNV32_BASIS = np.uint32(2166136261)
FNV32_PRIME = np.uint32(16777619)


@njit(cache=True)
def gaussian_blur(img, kern):
    h, w = img.shape
    out = np.empty((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for ky in range(5):
                yy = y + ky - 2
                if yy < 0:
                    yy = 0
                elif yy >= h:
                    yy = h - 1
                for kx in range(5):
                    xx = x + kx - 2
                    if xx < 0:
                        xx = 0
                    elif xx >= w:
                        xx = w - 1
                    acc += kern[ky, kx] * img[yy, xx]
            out[y, x] = acc
    return out


@njit(cache=True)
def lbp_codes(img):
    h, w = img.shape
    out = np.zeros((h - 2, w - 2), dtype=np.uint8)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            c = img[y, x]
            code = 0
            if img[y - 1, x - 1] >= c:
                code |= 1
            if img[y - 1, x] >= c:
                code |= 2
            if img[y - 1, x + 1] >= c:
                code |= 4
            if img[y, x + 1] >= c:
                code |= 8
            if img[y + 1, x + 1] >= c:
                code |= 16
            if img[y + 1, x] >= c:
                code |= 32
            if img[y + 1, x - 1] >= c:
                code |= 64
            if img[y, x - 1] >= c:
                code |= 128
            out[y - 1, x - 1] = code
    return out


@njit(cache=True)
def block_histogram_hashes(codes, grid, seed):
    h, w = codes.shape
    out = np.empty(grid * grid, dtype=np.uint32)
    basis = FNV32_BASIS ^ np.uint32(seed & 0xFFFFFFFF)
    hist = np.empty(256, dtype=np.int64)
    for by in range(grid):
        r0 = by * h // grid
        r1 = (by + 1) * h // grid
        for bx in range(grid):
            c0 = bx * w // grid
            c1 = (bx + 1) * w // grid
            npix = (r1 - r0) * (c1 - c0)
            hist[:] = 0
            for y in range(r0, r1):
                for x in range(c0, c1):
                    hist[codes[y, x]] += 1
            acc = basis
            for b in range(256):
                q = (hist[b] * 16) // (npix + 1)
                acc = np.uint32((acc ^ np.uint32(q)) * FNV32_PRIME)
            out[by * grid + bx] = acc
    return out


@njit(cache=True)
def fnv_window_hashes(data, window, seed):
    n = data.shape[0] - window + 1
    basis = FNV32_BASIS ^ np.uint32(seed & 0xFFFFFFFF)
    out = np.empty(n, dtype=np.uint32)
    for i in range(n):
        acc = basis
        for j in range(window):
            acc = np.uint32((acc ^ np.uint32(data[i + j])) * FNV32_PRIME)
        out[i] = acc
    return out


@njit(cache=True)
def count_equal_rows(stored, n, query):
    L = query.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(L):
            if stored[i, j] == query[j]:
                c += 1
        out[i] = c
    return out


@njit(cache=True)
def _intersect_sorted(a, la, b, lb):
    i = 0
    j = 0
    c = 0
    while i < la and j < lb:
        av = a[i]
        bv = b[j]
        if av == bv:
            c += 1
            i += 1
            j += 1
        elif av < bv:
            i += 1
        else:
            j += 1
    return c


@njit(cache=True)
def intersect_count_rows(stored, lengths, n, query):
    lq = query.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        out[i] = _intersect_sorted(stored[i], lengths[i], query, lq)
    return out


@njit(cache=True)
def pairwise_nn_positionwise(feats):
    n, L = feats.shape
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        best = np.int64(-1)
        for k in range(n):
            if k == i:
                continue
            c = 0
            for j in range(L):
                if feats[i, j] == feats[k, j]:
                    c += 1
            if c > best:
                best = c
        out[i] = best
    return out


@njit(cache=True)
def pairwise_nn_set(feats, lengths):
    n = feats.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        best = -1.0
        for k in range(n):
            if k == i:
                continue
            c = _intersect_sorted(feats[i], lengths[i], feats[k], lengths[k])
            denom = lengths[i] if lengths[i] > lengths[k] else lengths[k]
            if denom < 1:
                denom = 1
            s = c / denom
            if s > best:
                best = s
        out[i] = best
    return out


@njit(cache=True)
def affine_warp(img, inv_mat):
    h, w = img.shape
    out = np.empty((h, w), dtype=np.float64)
    m00 = inv_mat[0, 0]
    m01 = inv_mat[0, 1]
    m02 = inv_mat[0, 2]
    m10 = inv_mat[1, 0]
    m11 = inv_mat[1, 1]
    m12 = inv_mat[1, 2]
    for y in range(h):
        for x in range(w):
            sx = m00 * x + m01 * y + m02
            sy = m10 * x + m11 * y + m12
            x0 = np.floor(sx)
            y0 = np.floor(sy)
            fx = sx - x0
            fy = sy - y0
            x0i = int(x0)
            y0i = int(y0)
            if x0i < 0:
                x0i = 0
            elif x0i > w - 1:
                x0i = w - 1
            x1i = x0i + 1
            if x1i > w - 1:
                x1i = w - 1
            if y0i < 0:
                y0i = 0
            elif y0i > h - 1:
                y0i = h - 1
            y1i = y0i + 1
            if y1i > h - 1:
                y1i = h - 1
            v00 = img[y0i, x0i]
            v01 = img[y0i, x1i]
            v10 = img[y1i, x0i]
            v11 = img[y1i, x1i]
            top = (1.0 - fx) * v00 + fx * v01
            bot = (1.0 - fx) * v10 + fx * v11
            out[y, x] = (1.0 - fy) * top + fy * bot
    return out
