"""Simplified query-pattern generators for six black-box attack families.

Each generator reproduces its algorithm's query *structure* (probe fan-out
around a point, stepping, boundary interpolation) rather than published
convergence machinery; the provenance shape of the emitted stream is what
the defense consumes.

Generators are coroutines: they yield AttackQuery objects and receive
Feedback (accept/reject plus the model output when accepted). They never
touch the victim directly, so adaptive wrappers can interpose on the
exchange. A generator returns AttackResult when it stops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import SeededRng
from .benign import BenignFamily

ALGORITHMS = ("nes", "boundary", "square", "hsja", "qeba", "surfree")
SCORE_BASED = {"nes", "square"}

N_PROBES = 10


@dataclass(frozen=True)
class AttackQuery:
    image: np.ndarray  # uint8 (H, W), what actually goes on the wire
    base: np.ndarray  # float64 [0,1] (H, W) anchor point
    direction: np.ndarray | None  # unit-L2 float64 (H, W); None = not rescalable
    scale: float  # L2 magnitude along direction
    kind: str  # probe | step | interp | reference | init | trial
    intent_image: np.ndarray | None = None  # pre-blinding query, when wrapped


@dataclass(frozen=True)
class Feedback:
    accepted: bool
    scores: np.ndarray | None = None  # score-based victims, accepted only
    label: int | None = None  # decision-based victims, accepted only


@dataclass
class AttackResult:
    success: bool
    reason: str  # success | query-cap | no-feasible-move | exhausted
    queries: int = 0
    accepted: int = 0
    rejected: int = 0
    best_distance: float = float("inf")


@dataclass
class AttackState:
    """Shared per-run attack state."""

    x_vic: np.ndarray  # float64 [0,1] (H, W)
    true_label: int
    seed: int
    sigma: float = 0.05
    strategy: str = "none"  # none | blinding | oars
    x_t: np.ndarray | None = None
    iteration: int = 0
    step_size: float = 0.2  # fraction of budget per step
    noise_scale: float = 0.1  # probe radius as a fraction of budget
    query_cap: int = 5000
    family: BenignFamily | None = None  # image world for start-point draws

    def __post_init__(self):
        if self.x_t is None:
            self.x_t = self.x_vic.copy()
        if self.family is None:
            self.family = BenignFamily(size=self.x_vic.shape[0])

    @property
    def l2_budget(self) -> float:
        return float(self.sigma * np.linalg.norm(self.x_vic.ravel()))

    @property
    def linf_budget(self) -> float:
        return float(self.sigma)


def render(x: np.ndarray) -> np.ndarray:
    """Clamp a float image to valid intensities and quantize to uint8."""
    return np.clip(np.rint(np.clip(x, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)


def make_query(x: np.ndarray, base: np.ndarray, direction, scale: float, kind: str) -> AttackQuery:
    return AttackQuery(image=render(x), base=base, direction=direction, scale=scale, kind=kind)


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v.ravel()))
    return v / n if n > 0 else v


def white_dir(rng: SeededRng, size: int) -> np.ndarray:
    return unit(rng.normal(size * size).reshape(size, size))


def lowfreq_dir(rng: SeededRng, size: int, coarse: int = 16) -> np.ndarray:
    """Smooth random direction from an upsampled coarse field. Black-box
    attacks probe with structured perturbations (subspaces, patches); white
    noise at this dimensionality carries no usable gradient signal."""
    field = rng.normal(coarse * coarse).reshape(coarse, coarse)
    up = _coarse_field_from(field, size)
    return unit(up)


def _coarse_field_from(field: np.ndarray, size: int) -> np.ndarray:
    c = field.shape[0]
    pos = np.linspace(0.0, c - 1.0, size)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, c - 1)
    f = pos - i0
    r0 = field[i0][:, i1] * f[None, :] + field[i0][:, i0] * (1.0 - f[None, :])
    r1 = field[i1][:, i1] * f[None, :] + field[i1][:, i0] * (1.0 - f[None, :])
    return r0 * (1.0 - f[:, None]) + r1 * f[:, None]


def margin_loss(scores: np.ndarray, true_label: int) -> float:
    """True-class score minus best rival; negative = misclassified."""
    rival = np.max(np.delete(scores, true_label))
    return float(scores[true_label] - rival)


def _dist(img_u8: np.ndarray, x_vic: np.ndarray) -> float:
    return float(np.linalg.norm(img_u8.astype(np.float64).ravel() / 255.0 - x_vic.ravel()))


def _adversarial(fb: Feedback, true_label: int) -> bool | None:
    """None when the query was rejected (no information leaked)."""
    if not fb.accepted:
        return None
    if fb.label is not None:
        return fb.label != true_label
    if fb.scores is not None:
        return int(np.argmax(fb.scores)) != true_label
    return None


def _success_check(fb: Feedback, q: AttackQuery, state: AttackState, res: AttackResult, linf: bool = False) -> bool:
    adv = _adversarial(fb, state.true_label)
    if adv is not True:
        return False
    x = q.image.astype(np.float64) / 255.0
    if linf:
        d = float(np.max(np.abs(x - state.x_vic)))
        within = d <= state.linf_budget + 2.0 / 255.0
    else:
        d = _dist(q.image, state.x_vic)
        within = d <= state.l2_budget + 2.0 / 255.0
        res.best_distance = min(res.best_distance, d)
    return within


def _track(res: AttackResult, fb: Feedback) -> None:
    res.queries += 1
    if fb.accepted:
        res.accepted += 1
    else:
        res.rejected += 1


# ---------------------------------------------------------------------------
# Score-based attacks
# ---------------------------------------------------------------------------


def nes_attack(state: AttackState):
    """Per iteration: n Gaussian probes around the reference point, then a
    signed step on the estimated gradient, projected to the L-inf ball."""
    rng = SeededRng(state.seed, ("nes", "run"))
    size = state.x_vic.shape[0]
    res = AttackResult(success=False, reason="exhausted")
    x_t = state.x_vic.copy()
    budget = state.l2_budget
    probe_scale = state.noise_scale * budget
    lr = state.linf_budget / 5.0

    q0 = make_query(x_t, x_t, lowfreq_dir(rng, size), 0.0, "reference")
    ref_fb = yield q0
    _track(res, ref_fb)
    if _success_check(ref_fb, q0, state, res, linf=True):
        res.success, res.reason = True, "success"
        return res
    loss_ref = margin_loss(ref_fb.scores, state.true_label) if ref_fb.scores is not None else 0.0

    while res.queries < state.query_cap:
        state.iteration += 1
        grad = np.zeros_like(x_t)
        for _ in range(N_PROBES):
            if res.queries >= state.query_cap:
                res.reason = "query-cap"
                return res
            u = lowfreq_dir(rng, size)
            q = make_query(x_t + probe_scale * u, x_t, u, probe_scale, "probe")
            fb = yield q
            _track(res, fb)
            if fb.scores is not None:
                grad += (margin_loss(fb.scores, state.true_label) - loss_ref) * u
        grad /= N_PROBES
        # descend the margin loss within the L-inf ball
        x_t = x_t - lr * np.sign(grad)
        x_t = np.clip(x_t, state.x_vic - state.linf_budget, state.x_vic + state.linf_budget)
        x_t = np.clip(x_t, 0.0, 1.0)
        step_dir = unit(x_t - state.x_t) if np.any(x_t != state.x_t) else lowfreq_dir(rng, size)
        q = make_query(x_t, state.x_t, step_dir, float(np.linalg.norm((x_t - state.x_t).ravel())), "step")
        fb = yield q
        _track(res, fb)
        state.x_t = x_t.copy()
        if _success_check(fb, q, state, res, linf=True):
            res.success, res.reason = True, "success"
            return res
        if fb.scores is not None:
            loss_ref = margin_loss(fb.scores, state.true_label)
    res.reason = "query-cap"
    return res


def square_attack(state: AttackState):
    """Localized square-patch perturbations kept when the loss improves,
    projected to the L2 budget ball."""
    rng = SeededRng(state.seed, ("square", "run"))
    size = state.x_vic.shape[0]
    res = AttackResult(success=False, reason="exhausted")
    budget = state.l2_budget
    x_t = state.x_vic.copy()

    fb = yield make_query(x_t, x_t, lowfreq_dir(rng, size), 0.0, "reference")
    _track(res, fb)
    best_loss = margin_loss(fb.scores, state.true_label) if fb.scores is not None else float("inf")

    while res.queries < state.query_cap:
        state.iteration += 1
        frac = max(0.08, 0.35 * (1.0 - res.queries / state.query_cap))
        side = max(2, int(round(frac * size)))
        y0 = rng.integers(size - side + 1)
        x0 = rng.integers(size - side + 1)
        delta = np.zeros_like(x_t)
        amplitude = 2.5 * budget / size  # per-pixel patch magnitude
        delta[y0 : y0 + side, x0 : x0 + side] = amplitude * (1.0 if rng.uniform() < 0.5 else -1.0)
        cand = x_t + delta
        offset = cand - state.x_vic
        norm = float(np.linalg.norm(offset.ravel()))
        if norm > budget:
            offset *= budget / norm
        cand = np.clip(state.x_vic + offset, 0.0, 1.0)
        direction = unit(cand - x_t) if np.any(cand != x_t) else lowfreq_dir(rng, size)
        q = make_query(cand, x_t, direction, float(np.linalg.norm((cand - x_t).ravel())), "probe")
        fb = yield q
        _track(res, fb)
        if _success_check(fb, q, state, res):
            res.success, res.reason = True, "success"
            return res
        if fb.scores is not None:
            loss = margin_loss(fb.scores, state.true_label)
            if loss < best_loss:
                best_loss = loss
                x_t = cand
                state.x_t = cand.copy()
    res.reason = "query-cap"
    return res


# ---------------------------------------------------------------------------
# Decision-based attacks
# ---------------------------------------------------------------------------


def _find_adversarial_start(state: AttackState, rng: SeededRng, res: AttackResult):
    """Query random benign-family images until one is misclassified."""
    for _ in range(100):
        if res.queries >= state.query_cap:
            return None
        img = state.family.image(rng.split(("init", res.queries)))
        x = img.astype(np.float64) / 255.0
        fb = yield make_query(x, x, None, 0.0, "init")
        _track(res, fb)
        if _adversarial(fb, state.true_label) is True:
            return x
    return None


def _interp_to_boundary(state: AttackState, x_adv: np.ndarray, res: AttackResult, steps: int = 7):
    """Binary-search interpolation between the victim sample and the current
    adversarial point; returns the adversarial end of the bracket."""
    lo, hi = 0.0, 1.0  # x(t) = x_vic + t*(x_adv - x_vic); t=1 adversarial
    span = x_adv - state.x_vic
    direction = unit(span)
    span_norm = float(np.linalg.norm(span.ravel()))
    for _ in range(steps):
        if res.queries >= state.query_cap:
            break
        mid = 0.5 * (lo + hi)
        x_mid = state.x_vic + mid * span
        q = make_query(x_mid, state.x_vic, direction, mid * span_norm, "interp")
        fb = yield q
        _track(res, fb)
        adv = _adversarial(fb, state.true_label)
        if adv is True:
            hi = mid
            if _success_check(fb, q, state, res):
                return ("success", state.x_vic + hi * span)
        else:
            lo = mid
    return ("boundary", state.x_vic + hi * span)


def boundary_attack(state: AttackState):
    """Random walk along the decision boundary: orthogonal jitter plus a
    contraction toward the victim sample, kept when still adversarial."""
    rng = SeededRng(state.seed, ("boundary", "run"))
    size = state.x_vic.shape[0]
    res = AttackResult(success=False, reason="exhausted")

    x_adv = yield from _find_adversarial_start(state, rng, res)
    if x_adv is None:
        res.reason = "no-feasible-move" if res.queries < state.query_cap else "query-cap"
        return res
    res.best_distance = float(np.linalg.norm((x_adv - state.x_vic).ravel()))
    walk_scale = 0.2
    contract = 0.05
    while res.queries < state.query_cap:
        state.iteration += 1
        to_vic = state.x_vic - x_adv
        dist = float(np.linalg.norm(to_vic.ravel()))
        u = lowfreq_dir(rng, size)
        u_orth = unit(u - (np.sum(u * to_vic) / max(dist * dist, 1e-12)) * to_vic)
        # orthogonal step back onto the sphere around the victim, then contract
        stepped = x_adv + walk_scale * dist * u_orth
        offset = stepped - state.x_vic
        norm = float(np.linalg.norm(offset.ravel()))
        if norm > 0:
            stepped = state.x_vic + offset * (dist / norm)
        cand = np.clip(stepped + contract * (state.x_vic - stepped), 0.0, 1.0)
        direction = unit(cand - x_adv)
        q = make_query(cand, x_adv, direction, float(np.linalg.norm((cand - x_adv).ravel())), "probe")
        fb = yield q
        _track(res, fb)
        adv = _adversarial(fb, state.true_label)
        if adv is True:
            x_adv = cand
            state.x_t = cand.copy()
            d = _dist(q.image, state.x_vic)
            res.best_distance = min(res.best_distance, d)
            walk_scale = min(0.5, walk_scale * 1.1)
            contract = min(0.4, contract * 1.25)
            if _success_check(fb, q, state, res):
                res.success, res.reason = True, "success"
                return res
        else:
            walk_scale = max(0.005, walk_scale * 0.75)
            contract = max(0.002, contract * 0.8)
    res.reason = "query-cap"
    return res


def _hsja_like(state: AttackState, alg: str, probe_maker):
    """Shared skeleton for hsja and qeba: boundary point, n-probe gradient
    estimate, geometric step search, interpolation toward the victim."""
    rng = SeededRng(state.seed, (alg, "run"))
    size = state.x_vic.shape[0]
    res = AttackResult(success=False, reason="exhausted")
    budget = state.l2_budget
    probe_eps = state.noise_scale * budget

    x_adv = yield from _find_adversarial_start(state, rng, res)
    if x_adv is None:
        res.reason = "no-feasible-move" if res.queries < state.query_cap else "query-cap"
        return res

    best_boundary = None
    best_d = float("inf")
    stale_resets = 0
    while res.queries < state.query_cap:
        state.iteration += 1
        outcome, x_b = yield from _interp_to_boundary(state, x_adv, res)
        if outcome == "success":
            res.success, res.reason = True, "success"
            return res
        state.x_t = x_b.copy()
        d_b = float(np.linalg.norm((x_b - state.x_vic).ravel()))
        if d_b < best_d:
            best_d = d_b
            best_boundary = x_b.copy()
            stale_resets = 0
        elif best_boundary is not None and d_b > 1.3 * best_d and stale_resets < 3:
            # a noisy estimate walked us away; restart from the best point
            # (but not forever: a saturated neighborhood needs fresh ground)
            x_b = best_boundary.copy()
            d_b = best_d
            stale_resets += 1
        res.best_distance = min(res.best_distance, d_b)
        grad = np.zeros_like(x_b)
        for _ in range(N_PROBES):
            if res.queries >= state.query_cap:
                res.reason = "query-cap"
                return res
            u = probe_maker(rng, size)
            q = make_query(x_b + probe_eps * u, x_b, u, probe_eps, "probe")
            fb = yield q
            _track(res, fb)
            adv = _adversarial(fb, state.true_label)
            phi = 1.0 if adv is True else -1.0
            grad += phi * u
        grad = unit(grad / N_PROBES)
        # geometric step-size search away from the boundary; capped so the
        # walk cannot teleport out of its own similarity neighborhood
        xi = min(0.5 * d_b, 0.35 * state.l2_budget)
        moved = False
        for _ in range(6):
            if res.queries >= state.query_cap:
                res.reason = "query-cap"
                return res
            cand = np.clip(x_b + xi * grad, 0.0, 1.0)
            q = make_query(cand, x_b, grad, xi, "step")
            fb = yield q
            _track(res, fb)
            if _adversarial(fb, state.true_label) is True:
                x_adv = cand
                moved = True
                if _success_check(fb, q, state, res):
                    res.success, res.reason = True, "success"
                    return res
                break
            xi *= 0.5
        if not moved:
            x_adv = x_b  # fall back to interpolating from the boundary point
    res.reason = "query-cap"
    return res


def hsja_attack(state: AttackState):
    return (yield from _hsja_like(state, "hsja", lambda rng, size: lowfreq_dir(rng, size, coarse=16)))


def qeba_attack(state: AttackState):
    """hsja with probes drawn from an even lower-frequency subspace."""
    return (yield from _hsja_like(state, "qeba", lambda rng, size: lowfreq_dir(rng, size, coarse=8)))


def surfree_attack(state: AttackState):
    """Polar-coordinate direction trials with binary search along each;
    no gradient estimation."""
    rng = SeededRng(state.seed, ("surfree", "run"))
    size = state.x_vic.shape[0]
    res = AttackResult(success=False, reason="exhausted")

    x_adv = yield from _find_adversarial_start(state, rng, res)
    if x_adv is None:
        res.reason = "no-feasible-move" if res.queries < state.query_cap else "query-cap"
        return res
    res.best_distance = float(np.linalg.norm((x_adv - state.x_vic).ravel()))

    while res.queries < state.query_cap:
        state.iteration += 1
        to_adv = x_adv - state.x_vic
        dist = float(np.linalg.norm(to_adv.ravel()))
        d_hat = unit(to_adv)
        u = lowfreq_dir(rng, size)
        t_hat = unit(u - np.sum(u * d_hat) * d_hat)
        advanced = False
        phi_cap = min(np.pi / 4, 0.5 * state.l2_budget / max(dist, 1e-9))
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        angles = (np.pi / 16, np.pi / 8, np.pi / 4)
        for phi_base in tuple(side * a for a in angles) + tuple(-side * a for a in angles):
            phi = np.sign(phi_base) * min(abs(phi_base), phi_cap)
            if res.queries >= state.query_cap:
                res.reason = "query-cap"
                return res
            # candidate on the circumscribed semicircle: closer to the victim
            radius = dist * np.cos(phi)
            cand_dir = np.cos(phi) * d_hat + np.sin(phi) * t_hat
            cand = np.clip(state.x_vic + radius * cand_dir, 0.0, 1.0)
            q = make_query(cand, x_adv, unit(cand - x_adv), float(np.linalg.norm((cand - x_adv).ravel())), "probe")
            fb = yield q
            _track(res, fb)
            if _adversarial(fb, state.true_label) is True:
                x_adv = cand
                state.x_t = cand.copy()
                res.best_distance = min(res.best_distance, _dist(q.image, state.x_vic))
                advanced = True
                if _success_check(fb, q, state, res):
                    res.success, res.reason = True, "success"
                    return res
                break
        if advanced:
            # refine along the new direction with an interpolation search
            outcome, x_b = yield from _interp_to_boundary(state, x_adv, res, steps=4)
            if outcome == "success":
                res.success, res.reason = True, "success"
                return res
            x_adv = x_b
    res.reason = "query-cap"
    return res


GENERATORS = {
    "nes": nes_attack,
    "boundary": boundary_attack,
    "square": square_attack,
    "hsja": hsja_attack,
    "qeba": qeba_attack,
    "surfree": surfree_attack,
}


def make_attack(alg: str, state: AttackState):
    if alg not in GENERATORS:
        raise ValueError(f"unknown attack algorithm {alg!r}; choose from {sorted(GENERATORS)}")
    return GENERATORS[alg](state)
