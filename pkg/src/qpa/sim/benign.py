"""Synthetic benign query images.

Images are drawn from a family of shared background templates overlaid
with per-image texture gratings, shapes, and grain. The template pool
makes unrelated-image similarity a smooth low distribution (real benign
traffic shares scene structure), so the percentile-derived link threshold
lands on a stable, meaningful value. A near-duplicate mode re-renders one
base image under small affine jitter to stress false positives on
correlated benign traffic.
"""

from __future__ import annotations

import numpy as np

from ..numerics import SeededRng
from .imaging import affine_inverse_matrix, warp_uint8

DEFAULT_FAMILY_SEED = 7
N_TEMPLATES = 24


def _bilinear_resize(field: np.ndarray, size: int) -> np.ndarray:
    c = field.shape[0]
    pos = np.linspace(0.0, c - 1.0, size)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, c - 1)
    f = pos - i0
    rows0 = field[i0][:, i1] * f[None, :] + field[i0][:, i0] * (1.0 - f[None, :])
    rows1 = field[i1][:, i1] * f[None, :] + field[i1][:, i0] * (1.0 - f[None, :])
    return rows0 * (1.0 - f[:, None]) + rows1 * f[:, None]


def _coarse_field(rng: SeededRng, n: int, size: int) -> np.ndarray:
    return _bilinear_resize(rng.uniform(n * n).reshape(n, n), size)


class BenignFamily:
    """A world of benign imagery: a fixed template pool plus per-image
    randomization. Streams and graph-initialization sets drawn from the
    same family seed share the pool (and therefore a similarity regime)."""

    def __init__(self, family_seed: int = DEFAULT_FAMILY_SEED, size: int = 64,
                 n_templates: int = N_TEMPLATES):
        self.seed = family_seed
        self.size = size
        rng = SeededRng(family_seed, "benign-templates")
        self.templates = []
        for _ in range(n_templates):
            coarse_n = 4 + rng.integers(5)
            span = 60.0 + 110.0 * rng.uniform()
            offset = 25.0 + 50.0 * rng.uniform()
            self.templates.append(_coarse_field(rng, coarse_n, size) * span + offset)
        self._ys, self._xs = np.meshgrid(
            np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij"
        )

    def image(self, rng: SeededRng) -> np.ndarray:
        """One (size, size) uint8 image, deterministic in the rng stream."""
        size = self.size
        img = self.templates[rng.integers(len(self.templates))].copy()
        ys, xs = self._ys, self._xs
        # oriented gratings over a coverage mask: the high-contrast part of
        # the frame that keeps block hashes stable under small noise
        tex = np.zeros((size, size))
        for _ in range(2):
            theta = rng.uniform() * np.pi
            freq = 0.35 + 0.55 * rng.uniform()
            amp = 20.0 + 20.0 * rng.uniform()
            phase = rng.uniform() * 2.0 * np.pi
            tex += amp * np.sin(freq * (np.cos(theta) * xs + np.sin(theta) * ys) + phase)
        mask = _coarse_field(rng, 3 + rng.integers(3), size) > (0.35 + 0.3 * rng.uniform())
        img = img + tex * mask

        for _ in range(1 + rng.integers(3)):
            cx = rng.uniform() * size
            cy = rng.uniform() * size
            rx = size * (0.08 + 0.22 * rng.uniform())
            ry = size * (0.08 + 0.22 * rng.uniform())
            value = 20.0 + 215.0 * rng.uniform()
            blend = 0.4 + 0.4 * rng.uniform()
            if rng.uniform() < 0.5:
                shape = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
            else:
                shape = (np.abs(xs - cx) <= rx) & (np.abs(ys - cy) <= ry)
            img = np.where(shape, (1.0 - blend) * img + blend * value, img)

        img += rng.normal(size * size).reshape(size, size) * 2.5
        # stay inside the representable range so grain textures every block;
        # saturated flats hash identically across unrelated images
        return np.clip(np.rint(np.clip(img, 6.0, 249.0)), 0, 255).astype(np.uint8)

    def near_duplicate_frames(
        self,
        rng: SeededRng,
        n_frames: int,
        max_angle: float = 1.5,
        max_shift: float = 0.015,
        max_zoom: float = 0.015,
    ) -> list[np.ndarray]:
        """Frames of one scene under small affine jitter plus sensor grain."""
        size = self.size
        base = self.image(rng)
        frames = []
        for _ in range(n_frames):
            angle = (2.0 * rng.uniform() - 1.0) * max_angle
            sx = (2.0 * rng.uniform() - 1.0) * max_shift
            sy = (2.0 * rng.uniform() - 1.0) * max_shift
            zoom = 1.0 + (2.0 * rng.uniform() - 1.0) * max_zoom
            mat = affine_inverse_matrix(size, size, angle, sx, sy, zoom)
            frame = warp_uint8(base, mat).astype(np.float64)
            frame += rng.normal(size * size).reshape(size, size) * 2.0
            frames.append(np.clip(np.rint(frame), 0, 255).astype(np.uint8))
        return frames


def benign_image(rng: SeededRng, size: int = 64,
                 family_seed: int = DEFAULT_FAMILY_SEED) -> np.ndarray:
    """Convenience single-image draw from the default-constructed family."""
    return BenignFamily(family_seed, size).image(rng)
