"""Drives one interactive attack run against a defense and a victim.

The runner mediates the coroutine exchange: it sends each emitted query
through the defense, queries the victim only on acceptance, and feeds the
outcome back to the generator. It is also the authority on success (an
accepted, adversarial, within-budget query) and on the query cap, since
adaptive wrappers can change what actually goes on the wire.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..detector import Verdict
from ..features import ImagePayload
from ..numerics import SeededRng
from ..traces import AttackLabel, QueryRecord
from .adaptive import blinding_wrap, oars_wrap
from .attacks import SCORE_BASED, AttackResult, AttackState, Feedback, make_attack
from .victim import DECISION_MODE, SCORE_MODE, ToyVictim


@dataclass
class RunOutcome:
    alg: str
    run_id: int
    strategy: str
    success: bool
    reason: str
    queries: int
    accepted: int
    rejected: int
    first_rejection: int | None
    best_distance: float
    records: list[QueryRecord] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)


def _within_budget(img_u8: np.ndarray, state: AttackState, linf: bool) -> bool:
    x = img_u8.astype(np.float64) / 255.0
    if linf:
        return float(np.max(np.abs(x - state.x_vic))) <= state.linf_budget + 2.0 / 255.0
    # allow worst-case uint8 quantization inflation of the norm
    tol = 0.5 / 255.0 * np.sqrt(x.size)
    return float(np.linalg.norm((x - state.x_vic).ravel())) <= state.l2_budget + tol


def run_attack(
    alg: str,
    victim: ToyVictim,
    defense,
    state: AttackState,
    run_id: int = 0,
    account: str | None = None,
    strategy: str = "none",
    qid_start: int = 0,
    ts_start_ms: int = 0,
    ts_step_ms: int = 50,
    keep_records: bool = False,
) -> RunOutcome:
    """One full attack run; `defense` is anything with .process(record)."""
    score_based = alg in SCORE_BASED
    if score_based and victim.mode != SCORE_MODE:
        raise ValueError(f"{alg} needs a score-based victim")
    gen = make_attack(alg, state)
    if strategy == "blinding":
        gen = blinding_wrap(gen, SeededRng(state.seed, ("blinding", run_id)))
    elif strategy == "oars":
        gen = oars_wrap(gen, state, SeededRng(state.seed, ("oars", run_id)))
    elif strategy != "none":
        raise ValueError(f"unknown strategy {strategy!r}")

    account = account or f"attacker-{run_id}"
    out = RunOutcome(
        alg=alg, run_id=run_id, strategy=strategy, success=False, reason="exhausted",
        queries=0, accepted=0, rejected=0, first_rejection=None, best_distance=float("inf"),
    )
    fb = None
    result: AttackResult | None = None
    while True:
        if out.queries >= state.query_cap:
            out.reason = "query-cap"
            break
        try:
            q = gen.send(fb)
        except StopIteration as stop:
            result = stop.value
            break
        record = QueryRecord(
            query_id=qid_start + out.queries,
            account=account,
            ts_ms=ts_start_ms + out.queries * ts_step_ms,
            image=ImagePayload.from_array(q.image),
            label=AttackLabel(run=run_id, alg=alg),
        )
        verdict = defense.process(record)
        accepted = verdict.decision == "accept"
        out.queries += 1
        if keep_records:
            out.records.append(record)
            out.verdicts.append(verdict)
        if accepted:
            out.accepted += 1
            if score_based:
                fb = Feedback(accepted=True, scores=victim.scores(q.image))
            else:
                fb = Feedback(accepted=True, label=victim.label(q.image))
        else:
            out.rejected += 1
            if out.first_rejection is None:
                out.first_rejection = out.queries
            fb = Feedback(accepted=False)
        # runner-side success authority: judge the attacker's intended query
        judged = q.intent_image if q.intent_image is not None else q.image
        if accepted:
            adv = victim.peek_label(judged) != state.true_label
            if adv:
                dist = float(
                    np.linalg.norm(judged.astype(np.float64).ravel() / 255.0 - state.x_vic.ravel())
                )
                out.best_distance = min(out.best_distance, dist)
                if _within_budget(judged, state, linf=(alg == "nes")):
                    out.success = True
                    out.reason = "success"
                    break
    if result is not None:
        out.best_distance = min(out.best_distance, result.best_distance)
        if not out.success:
            # the generator may think it succeeded from feedback on a
            # rewritten (blinded/resampled) query; the runner's geometric
            # check is authoritative
            out.reason = "claimed-success" if result.reason == "success" else result.reason
    return out
