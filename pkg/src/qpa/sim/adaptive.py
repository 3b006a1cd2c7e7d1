"""Adaptive attack strategies that consume defense verdicts.

Query blinding hides each outgoing query behind a random affine transform;
the adapt-and-resample wrapper reacts to rejections by searching upward for
the smallest accepted perturbation scale and adopting it for subsequent
probes. Both wrap the attack coroutines transparently.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..numerics import SeededRng
from .attacks import AttackResult, AttackState, make_query, white_dir
from .imaging import affine_inverse_matrix, warp_uint8

BLINDING_MAX_ANGLE = 10.0
BLINDING_MAX_SHIFT = 0.10
BLINDING_MAX_ZOOM = 0.10

OARS_MAX_DOUBLINGS = 8
OARS_BISECT_TOL = 1e-3


def apply_blinding(
    image: np.ndarray,
    rng: SeededRng,
    max_angle: float = BLINDING_MAX_ANGLE,
    max_shift: float = BLINDING_MAX_SHIFT,
    max_zoom: float = BLINDING_MAX_ZOOM,
) -> np.ndarray:
    """Seeded random affine within the stated bounds, bilinear resample."""
    h, w = image.shape[:2]
    angle = (2.0 * rng.uniform() - 1.0) * max_angle
    sx = (2.0 * rng.uniform() - 1.0) * max_shift
    sy = (2.0 * rng.uniform() - 1.0) * max_shift
    zoom = 1.0 + (2.0 * rng.uniform() - 1.0) * max_zoom
    mat = affine_inverse_matrix(w, h, angle, sx, sy, zoom)
    return warp_uint8(image, mat)


def blinding_wrap(inner, rng: SeededRng):
    """Transform every outgoing query image; the attack's own view of its
    points is unchanged (`intent_image` carries the untransformed query)."""
    fb = None
    while True:
        try:
            q = inner.send(fb)
        except StopIteration as stop:
            return stop.value
        blinded = apply_blinding(q.image, rng)
        fb = yield replace(q, image=blinded, intent_image=q.image)


def oars_wrap(inner, state: AttackState, rng: SeededRng):
    """Adapt-and-resample: when a query is rejected, resample it with fresh
    noise at doubling offsets (up to 8 doublings, capped at the budget),
    then bisect for the smallest accepted offset; that offset becomes the
    standing noise scale applied to every subsequent query. When no
    accepted offset exists within budget, the run fails."""
    budget = state.l2_budget
    floor_offset = 0.02 * budget
    size = state.x_vic.shape[0]
    adopted = 0.0  # last working resample offset; warm-starts the next search
    fb_inner = None
    while True:
        try:
            q = inner.send(fb_inner)
        except StopIteration as stop:
            return stop.value
        fb = yield q
        if fb.accepted:
            fb_inner = fb
            continue
        # rejected: resample around the intended point with fresh noise at
        # doubling offsets, seeking the smallest accepted offset
        intent = q.base if q.direction is None else q.base + q.scale * q.direction
        lo = max(0.5 * adopted, floor_offset)  # largest known-rejected offset
        hi = None  # smallest known-accepted offset
        hi_fb = None
        offset = lo
        for _ in range(OARS_MAX_DOUBLINGS):
            if offset >= budget:
                break
            offset = min(offset * 2.0, budget)
            u = white_dir(rng, size)
            trial = make_query(intent + offset * u, q.base, q.direction, q.scale, "trial")
            fb_trial = yield trial
            if fb_trial.accepted:
                hi, hi_fb = offset, fb_trial
                break
            lo = offset
        if hi is None:
            return AttackResult(success=False, reason="no-feasible-move")
        while hi - lo > OARS_BISECT_TOL * budget:
            mid = 0.5 * (lo + hi)
            u = white_dir(rng, size)
            trial = make_query(intent + mid * u, q.base, q.direction, q.scale, "trial")
            fb_trial = yield trial
            if fb_trial.accepted:
                hi, hi_fb = mid, fb_trial
            else:
                lo = mid
        adopted = hi
        fb_inner = hi_fb
