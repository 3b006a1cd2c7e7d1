"""Shared numeric kernels: t-distribution critical values, the graph
convolution forward/backward pass, and seeded counter-based RNG streams.

Everything here is 64-bit float and bit-deterministic for fixed inputs:
no parallel reductions, fixed evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "t_upper_critical",
    "regularized_incomplete_beta",
    "SeededRng",
    "GcnWeights",
    "gcn_init_weights",
    "gcn_forward",
    "gcn_backward",
    "normalized_adjacency",
]


# ---------------------------------------------------------------------------
# Student's t upper critical values
# ---------------------------------------------------------------------------

_CF_MAX_ITER = 300
_CF_EPS = 1e-15
_CF_FPMIN = 1e-300


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Use the continued fraction on the side where it converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _t_upper_tail(t: float, df: float) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    if t < 0.0:
        return 1.0 - _t_upper_tail(-t, df)
    x = df / (df + t * t)
    return 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)


@lru_cache(maxsize=8192)
def t_upper_critical(p: float, df: int) -> float:
    """Value t such that the upper-tail probability of Student's t equals p.

    Inverts the tail CDF by bisection on the regularized incomplete beta;
    absolute error below 1e-8. Requires 0 < p < 0.5 and df >= 1.
    """
    if not 0.0 < p < 0.5:
        raise ValueError(f"tail probability must be in (0, 0.5), got {p}")
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    dff = float(df)
    lo, hi = 0.0, 1.0
    while _t_upper_tail(hi, dff) > p:
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("t quantile bracket expansion failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _t_upper_tail(mid, dff) > p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Seeded RNG with stable, splittable streams
# ---------------------------------------------------------------------------

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3


def _fnv64(data: bytes) -> int:
    h = _FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class SeededRng:
    """Counter-based random stream keyed by (seed, stream id).

    Built on Philox so the same key yields the same sequence on every
    platform. Gaussian draws use Box-Muller on the uniform stream (fixed
    draw count, no rejection loops) so replay never desynchronizes.
    """

    def __init__(self, seed: int, stream: object = 0):
        self.seed = int(seed)
        self.stream = stream
        key = np.array(
            [self.seed & 0xFFFFFFFFFFFFFFFF, _fnv64(repr(stream).encode("utf-8"))],
            dtype=np.uint64,
        )
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, substream: object) -> "SeededRng":
        """Independent child stream; deterministic in (seed, stream, substream)."""
        return SeededRng(self.seed, (self.stream, substream))

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws in [0, 1)."""
        return self._gen.random(size)

    def normal(self, size: int) -> np.ndarray:
        """Standard normal draws via Box-Muller; consumes exactly 2*ceil(size/2) uniforms."""
        pairs = (size + 1) // 2
        u = self._gen.random(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[:pairs]))
        theta = 2.0 * math.pi * u[pairs:]
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:size]

    def integers(self, n: int, size=None):
        """Integers uniform on [0, n)."""
        if size is None:
            return min(int(self._gen.random() * n), n - 1)
        u = self._gen.random(size)
        return np.minimum((u * n).astype(np.int64), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n) driven by the uniform stream."""
        out = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in draw order."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        pool = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self.integers(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()


# ---------------------------------------------------------------------------
# Graph convolution network kernels
# ---------------------------------------------------------------------------


@dataclass
class GcnWeights:
    """Dense weights for the 3-conv + 1-linear graph classifier.

    Matrices are row-major float64; `hidden` is the conv width and the
    final linear layer maps the pooled embedding to 2 logits.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    hidden: int = 32

    def as_list(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3, self.w4, self.b4]

    def copy(self) -> "GcnWeights":
        return GcnWeights(*(m.copy() for m in self.as_list()), hidden=self.hidden)


def gcn_init_weights(rng: SeededRng, hidden: int = 32, in_dim: int = 1) -> GcnWeights:
    """Glorot-style uniform init, deterministic in the rng stream."""

    def glorot(fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniform(fan_in * fan_out)
        return ((2.0 * u - 1.0) * limit).reshape(fan_in, fan_out)

    return GcnWeights(
        w1=glorot(in_dim, hidden),
        b1=np.zeros(hidden),
        w2=glorot(hidden, hidden),
        b2=np.zeros(hidden),
        w3=glorot(hidden, hidden),
        b3=np.zeros(hidden),
        w4=glorot(hidden, 2),
        b4=np.zeros(2),
        hidden=hidden,
    )


def normalized_adjacency(adj: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^-1/2 (A+I) D^-1/2."""
    n = adj.shape[0]
    a_hat = adj.astype(np.float64) + np.eye(n)
    deg = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


def _softmax2(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    e = np.exp(logits - m)
    return e / e.sum()


def gcn_forward(weights: GcnWeights, adj_norm: np.ndarray, feats: np.ndarray):
    """Forward pass over one graph.

    feats is (n, in_dim); adj_norm the pre-normalized adjacency. Returns
    (probs, cache) where probs[1] is the anomaly-class probability.
    """
    n = adj_norm.shape[0]
    if feats.shape[0] != n:
        raise ValueError(f"feature rows {feats.shape[0]} != adjacency size {n}")
    x0 = adj_norm @ feats
    z1 = x0 @ weights.w1 + weights.b1
    h1 = np.maximum(z1, 0.0)
    x1 = adj_norm @ h1
    z2 = x1 @ weights.w2 + weights.b2
    h2 = np.maximum(z2, 0.0)
    x2 = adj_norm @ h2
    z3 = x2 @ weights.w3 + weights.b3
    h3 = np.maximum(z3, 0.0)
    pooled = h3.mean(axis=0)
    logits = pooled @ weights.w4 + weights.b4
    probs = _softmax2(logits)
    cache = (feats, x0, z1, h1, x1, z2, h2, x2, z3, h3, pooled, probs)
    return probs, cache


def gcn_backward(weights: GcnWeights, adj_norm: np.ndarray, cache, label: int) -> GcnWeights:
    """Exact gradients of the cross-entropy loss -log p[label] w.r.t. all weights."""
    feats, x0, z1, h1, x1, z2, h2, x2, z3, h3, pooled, probs = cache
    n = adj_norm.shape[0]
    d_logits = probs.copy()
    d_logits[label] -= 1.0
    g_w4 = np.outer(pooled, d_logits)
    g_b4 = d_logits.copy()
    d_pooled = weights.w4 @ d_logits
    d_h3 = np.repeat(d_pooled[None, :], n, axis=0) / n
    d_z3 = d_h3 * (z3 > 0.0)
    g_w3 = x2.T @ d_z3
    g_b3 = d_z3.sum(axis=0)
    d_h2 = adj_norm @ (d_z3 @ weights.w3.T)
    d_z2 = d_h2 * (z2 > 0.0)
    g_w2 = x1.T @ d_z2
    g_b2 = d_z2.sum(axis=0)
    d_h1 = adj_norm @ (d_z2 @ weights.w2.T)
    d_z1 = d_h1 * (z1 > 0.0)
    g_w1 = x0.T @ d_z1
    g_b1 = d_z1.sum(axis=0)
    return GcnWeights(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3, g_w4, g_b4, hidden=weights.hidden)
