"""Benign trace generation and stream mixing.

Benign traffic is drawn from the diverse synthetic family (optionally in
near-duplicate burst mode). Mixing interleaves recorded attack runs into a
benign stream at a target anomaly rate: attack slots are placed uniformly
at random, per-run query order is preserved, and runs are riffled together
by a seeded shuffle of their slot tags.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..features import ImagePayload
from ..numerics import SeededRng
from ..traces import QueryRecord
from .benign import DEFAULT_FAMILY_SEED, BenignFamily

TS_STEP_MS = 50


def gen_benign(
    count: int,
    seed: int,
    size: int = 64,
    near_dup: bool = False,
    frames_per_base: int = 30,
    accounts: int = 50,
    family_seed: int = DEFAULT_FAMILY_SEED,
    qid_start: int = 0,
    ts_start_ms: int = 0,
) -> list[QueryRecord]:
    """Benign stream trace; near_dup mode emits affine-jittered frame bursts."""
    family = BenignFamily(family_seed, size)
    rng = SeededRng(seed, "benign-stream")
    records: list[QueryRecord] = []
    pending: list[np.ndarray] = []
    i = 0
    while len(records) < count:
        if near_dup:
            if not pending:
                pending = family.near_duplicate_frames(rng.split(("base", i)), frames_per_base)
            img = pending.pop(0)
        else:
            img = family.image(rng)
        records.append(
            QueryRecord(
                query_id=qid_start + len(records),
                account=f"benign-{i % accounts}",
                ts_ms=ts_start_ms + len(records) * TS_STEP_MS,
                image=ImagePayload.from_array(img),
                label=None,
            )
        )
        i += 1
    return records


def benign_init_images(
    count: int, seed: int, size: int = 64, family_seed: int = DEFAULT_FAMILY_SEED
) -> list[np.ndarray]:
    """The benign set used for graph initialization (separate stream id)."""
    family = BenignFamily(family_seed, size)
    rng = SeededRng(seed, "benign-init")
    return [family.image(rng) for _ in range(count)]


def mix_traces(
    benign: list[QueryRecord],
    attacks: list[list[QueryRecord]],
    rate: float,
    seed: int,
) -> list[QueryRecord]:
    """Interleave recorded attack runs into the benign stream so the attack
    fraction is ~rate. Attack-internal order is preserved; runs are riffled
    together uniformly at random. Records are re-numbered and re-stamped."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"anomaly rate must be in [0, 1), got {rate}")
    n_attack = sum(len(a) for a in attacks)
    if rate == 0.0 or n_attack == 0:
        merged = list(benign)
        return _restamp(merged)
    rng = SeededRng(seed, "mixer")
    n_benign_needed = int(round(n_attack * (1.0 - rate) / rate))
    benign_used = benign[:n_benign_needed] if len(benign) >= n_benign_needed else list(benign)
    total = len(benign_used) + n_attack

    # riffle the runs: shuffle the multiset of run tags, order within runs kept
    tags = []
    for ridx, run in enumerate(attacks):
        tags.extend([ridx] * len(run))
    tags = [tags[i] for i in rng.permutation(len(tags))]

    attack_positions = set(int(p) for p in rng.choice(total, n_attack))
    iters = [iter(run) for run in attacks]
    tag_iter = iter(tags)
    benign_iter = iter(benign_used)
    merged: list[QueryRecord] = []
    for slot in range(total):
        if slot in attack_positions:
            ridx = next(tag_iter)
            merged.append(next(iters[ridx]))
        else:
            merged.append(next(benign_iter))
    return _restamp(merged)


def _restamp(records: list[QueryRecord]) -> list[QueryRecord]:
    out = []
    for i, rec in enumerate(records):
        out.append(
            QueryRecord(
                query_id=i,
                account=rec.account,
                ts_ms=i * TS_STEP_MS,
                image=rec.image,
                label=rec.label,
            )
        )
    return out
