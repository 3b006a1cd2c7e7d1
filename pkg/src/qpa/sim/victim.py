"""Seeded linear toy victim model standing in for the guarded classifier.

Class scores mix a per-class brightness coefficient with a small random
texture component, so decision-boundary distances are commensurate with
the attack perturbation budget: attacks can succeed, but only by
converging into a thin adversarial shell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from ..features import ImagePayload
from ..numerics import SeededRng
from .benign import BenignFamily

SCORE_MODE = "score"
DECISION_MODE = "decision"


@dataclass
class ToyVictim:
    """Affine classifier over flattened grayscale images.

    Class scores form an upper envelope of lines in mean brightness (so the
    classes partition brightness into bands) plus a small per-class texture
    term; `scores` exposes the full score vector (score-based threat model),
    `label` only the argmax (decision-based threat model).
    """

    weights: np.ndarray  # (classes, size*size)
    bias: np.ndarray  # (classes,)
    size: int
    mode: str = SCORE_MODE
    query_count: int = field(default=0, compare=False)

    @classmethod
    def seeded(
        cls,
        seed: int,
        size: int = 64,
        classes: int = 10,
        mode: str = SCORE_MODE,
        texture_scale: float = 0.005,
        band_lo: float = 0.22,
        band_hi: float = 0.72,
    ) -> "ToyVictim":
        rng = SeededRng(seed, "victim")
        d = size * size
        slopes = np.arange(classes, dtype=np.float64)
        thresholds = np.linspace(band_lo, band_hi, classes - 1)
        bias = np.zeros(classes)
        for c in range(1, classes):
            bias[c] = bias[c - 1] - thresholds[c - 1] * (slopes[c] - slopes[c - 1])
        noise = rng.normal(classes * d).reshape(classes, d) / np.sqrt(d)
        w = slopes[:, None] * (np.ones(d) / d)[None, :] + texture_scale * noise
        return cls(weights=w, bias=bias, size=size, mode=mode)

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    def _normalize(self, image) -> np.ndarray:
        if isinstance(image, ImagePayload):
            if image.channels != 1 or image.width != self.size or image.height != self.size:
                raise ContractError("victim expects single-channel images of its own size")
            return image.data.astype(np.float64) / 255.0
        arr = np.asarray(image)
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float64) / 255.0
        else:
            arr = arr.astype(np.float64)
        arr = arr.ravel()
        if arr.shape[0] != self.size * self.size:
            raise ContractError("flattened image size mismatch")
        return arr

    def scores(self, image) -> np.ndarray:
        if self.mode != SCORE_MODE:
            raise ContractError("victim is decision-based; scores are not exposed")
        self.query_count += 1
        return self.weights @ self._normalize(image) + self.bias

    def label(self, image) -> int:
        self.query_count += 1
        return int(np.argmax(self.weights @ self._normalize(image) + self.bias))

    def peek_label(self, image) -> int:
        """Label without counting a query (simulator-side ground truth)."""
        return int(np.argmax(self.weights @ self._normalize(image) + self.bias))

    def boundary_distance(self, image) -> float:
        """L2 distance from the image to the nearest decision boundary
        (simulator-side only; exact for an affine model)."""
        x = self._normalize(image)
        s = self.weights @ x + self.bias
        t = int(np.argmax(s))
        best = np.inf
        for j in range(self.classes):
            if j == t:
                continue
            gap = (s[t] - s[j]) / np.linalg.norm(self.weights[t] - self.weights[j])
            best = min(best, gap)
        return float(best)


def l2_budget(sigma: float, x_vic: np.ndarray) -> float:
    """Perturbation budget normalized to the victim sample's own norm."""
    return float(sigma * np.linalg.norm(np.asarray(x_vic, dtype=np.float64).ravel()))


def pick_victim_sample(
    victim: ToyVictim,
    rng: SeededRng,
    family: BenignFamily | None = None,
    sigma: float = 0.05,
    min_frac: float = 0.30,
    max_frac: float = 0.80,
    max_tries: int = 400,
) -> tuple[np.ndarray, int]:
    """A benign-family image whose boundary distance sits inside the
    attackable shell: between min_frac and max_frac of the L2 budget."""
    family = family or BenignFamily(size=victim.size)
    fallback = None
    for _ in range(max_tries):
        img = family.image(rng)
        x = img.astype(np.float64) / 255.0
        budget = l2_budget(sigma, x)
        dist = victim.boundary_distance(x)
        if min_frac * budget <= dist <= max_frac * budget:
            return img, victim.peek_label(x)
        if fallback is None:
            fallback = img
    return fallback, victim.peek_label(fallback.astype(np.float64) / 255.0)
