"""Experiment orchestration: init sets, classifier training corpus,
trace replay, and the evaluation suites behind the CLI.

Everything is seeded; a suite re-run with the same config reproduces its
verdict and metrics files byte for byte (timing files excluded).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import (
    LABEL_ANOMALY,
    LABEL_BENIGN,
    DetectorConfig,
    GcnModel,
    LineGraph,
    TrainReport,
    Verdict,
    line_graph,
    train_classifier,
)
from .engine import AcceptAll, BaselineSdm, DefenseEngine
from .features import ExtractorParams, FeatureVector, ImagePayload, extract
from .graph import GraphConfig, NodeMeta, ProvenanceStore
from .metrics import MetricsReport, compute_metrics
from .numerics import SeededRng
from .sim.attacks import ALGORITHMS, AttackState
from .sim.benign import BenignFamily
from .sim.mixer import benign_init_images, gen_benign, mix_traces
from .sim.runner import RunOutcome, run_attack
from .sim.victim import SCORE_MODE, ToyVictim, pick_victim_sample
from .traces import QueryRecord


def build_init_features(
    params: ExtractorParams, count: int, seed: int, size: int = 64, family_seed: int = 7
) -> list[FeatureVector]:
    imgs = benign_init_images(count, seed, size, family_seed)
    return [extract(ImagePayload.from_array(im), params) for im in imgs]


# ---------------------------------------------------------------------------
# Attack trace recording
# ---------------------------------------------------------------------------


def record_attack_run(
    alg: str,
    seed: int,
    run_id: int,
    size: int = 64,
    family_seed: int = 7,
    victim_seed: int = 100,
    sigma: float = 0.05,
    query_cap: int = 200,
) -> RunOutcome:
    """One attack run against the undefended victim, with records kept."""
    family = BenignFamily(family_seed, size)
    victim = ToyVictim.seeded(victim_seed, size=size, mode=SCORE_MODE)
    rng = SeededRng(seed, ("victim-pick", alg, run_id))
    img, label = pick_victim_sample(victim, rng, family, sigma=sigma)
    state = AttackState(
        x_vic=img.astype(np.float64) / 255.0,
        true_label=label,
        seed=seed,
        sigma=sigma,
        query_cap=query_cap,
        family=family,
    )
    return run_attack(
        alg, victim, AcceptAll(), state, run_id=run_id, keep_records=True
    )


# ---------------------------------------------------------------------------
# Classifier training corpus
# ---------------------------------------------------------------------------


def build_training_corpus(
    params: ExtractorParams,
    graph_cfg: GraphConfig,
    init_features: list[FeatureVector],
    seed: int,
    runs_per_alg: int = 5,
    attack_cap: int = 150,
    benign_count: int = 8000,
    near_dup_count: int = 2500,
    benign_snapshot_every: int = 250,
    benign_top_per_snapshot: int = 3,
    size: int = 64,
    family_seed: int = 7,
) -> list[tuple[LineGraph, int]]:
    """Line-graph samples per the training protocol: for every attack
    algorithm several seeded runs snapshotted every min_graph_size queries
    (anomaly label); benign replays snapshotted every 500 queries."""
    corpus: list[tuple[LineGraph, int]] = []
    s = graph_cfg.min_graph_size

    for alg in ALGORITHMS:
        for run in range(runs_per_alg):
            out = record_attack_run(
                alg, seed=seed * 1000 + run, run_id=run, size=size,
                family_seed=family_seed, query_cap=attack_cap,
            )
            store, _ = ProvenanceStore.initialize(init_features, graph_cfg, params)
            touched: set[int] = set()
            for i, rec in enumerate(out.records):
                fv = extract(rec.image, params)
                r = store.insert(fv, NodeMeta(rec.query_id))
                touched.add(r.component_id)
                if (i + 1) % s == 0:
                    # the run's main cluster; classifier inputs are always
                    # at least min_graph_size nodes, in training too
                    comps = [
                        store.components[c] for c in touched if c in store.components
                    ]
                    comps = [c for c in comps if c.size >= s and c.edges]
                    if comps:
                        main = max(comps, key=lambda c: (c.pas, c.size, -c.cid))
                        corpus.append((line_graph(main), LABEL_ANOMALY))

    for near_dup, count, stream_seed in (
        (False, benign_count, seed + 1),
        (True, near_dup_count, seed + 2),
    ):
        records = gen_benign(count, seed=stream_seed, size=size,
                             near_dup=near_dup, family_seed=family_seed)
        store, _ = ProvenanceStore.initialize(init_features, graph_cfg, params)
        for i, rec in enumerate(records):
            fv = extract(rec.image, params)
            store.insert(fv, NodeMeta(rec.query_id))
            if (i + 1) % benign_snapshot_every == 0:
                comps = [c for c in store.components.values() if c.edges]
                comps.sort(key=lambda c: (-c.pas, -c.size, c.cid))
                for comp in comps[:benign_top_per_snapshot]:
                    corpus.append((line_graph(comp), LABEL_BENIGN))
    return corpus


def train_and_save(
    corpus: list[tuple[LineGraph, int]],
    model_path: Path | str,
    seed: int = 0,
    epochs: int = 200,
    learning_rate: float = 0.5,
) -> tuple[GcnModel, TrainReport]:
    model, report = train_classifier(corpus, seed=seed, epochs=epochs, learning_rate=learning_rate)
    model.save(model_path)
    return model, report


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


@dataclass
class ReplayResult:
    verdicts: list[Verdict]
    metrics: MetricsReport
    elapsed_s: float
    engine: object = field(repr=False, default=None)


def replay_trace(engine, records: list[QueryRecord]) -> ReplayResult:
    """Run a recorded trace through a defense engine, one query at a time."""
    verdicts = []
    t0 = time.perf_counter()
    for rec in records:
        verdicts.append(engine.process(rec))
    elapsed = time.perf_counter() - t0
    latencies = engine.stats.latencies_ms if getattr(engine, "record_latency", False) else None
    metrics = compute_metrics(records, verdicts, latencies_ms=latencies, elapsed_s=elapsed)
    return ReplayResult(verdicts=verdicts, metrics=metrics, elapsed_s=elapsed, engine=engine)


def make_engine(
    params: ExtractorParams,
    graph_cfg: GraphConfig,
    det_cfg: DetectorConfig,
    model: GcnModel | None,
    init_features: list[FeatureVector],
    disk_root=None,
    eviction_enabled: bool = True,
    record_latency: bool = False,
    reset_mode: str = "queries",
) -> DefenseEngine:
    return DefenseEngine(
        params, graph_cfg, det_cfg, model, init_features,
        disk_root=disk_root, eviction_enabled=eviction_enabled,
        record_latency=record_latency, reset_mode=reset_mode,
    )


def mixed_attack_trace(
    alg: str,
    seed: int,
    rate: float = 0.01,
    attack_cap: int = 200,
    size: int = 64,
    family_seed: int = 7,
    benign_seed_offset: int = 50_000,
) -> list[QueryRecord]:
    """One recorded attack run mixed into fresh benign traffic at `rate`."""
    out = record_attack_run(alg, seed=seed, run_id=0, size=size,
                            family_seed=family_seed, query_cap=attack_cap)
    n_benign = int(round(len(out.records) * (1.0 - rate) / rate))
    benign = gen_benign(n_benign, seed=seed + benign_seed_offset, size=size,
                        family_seed=family_seed)
    return mix_traces(benign, [out.records], rate, seed=seed)


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------


def save_corpus(corpus: list[tuple[LineGraph, int]], path: Path | str) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for lg, label in corpus:
            pairs = [
                [int(i), int(j)]
                for i in range(lg.n_nodes)
                for j in range(i + 1, lg.n_nodes)
                if lg.adjacency[i, j] > 0
            ]
            doc = {
                "label": label,
                "weights": [float(w) for w in lg.features[:, 0]],
                "edges": pairs,
            }
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_corpus(path: Path | str) -> list[tuple[LineGraph, int]]:
    import json

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            weights = np.array(doc["weights"], dtype=np.float64).reshape(-1, 1)
            n = weights.shape[0]
            adj = np.zeros((n, n), dtype=np.float64)
            for i, j in doc["edges"]:
                adj[i, j] = 1.0
                adj[j, i] = 1.0
            out.append((LineGraph(features=weights, adjacency=adj), doc["label"]))
    return out
