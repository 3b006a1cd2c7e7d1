"""Evaluation suites: per-generator detection tables, adaptive-strategy
attack-success tables, collaborative attacks, ablations, and the
performance run.

Each suite writes CSVs plus the resolved config into its output directory.
Detection metrics files are byte-deterministic for a given config and
seed; wall-clock measurements go to separate perf files.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, write_provenance
from .detector import DetectorConfig, GcnModel
from .engine import BaselineSdm
from .graph import GraphConfig
from .harness import (
    build_init_features,
    make_engine,
    mixed_attack_trace,
    record_attack_run,
    replay_trace,
)
from .metrics import write_verdicts
from .numerics import SeededRng
from .sim.attacks import ALGORITHMS, AttackState
from .sim.benign import BenignFamily
from .sim.mixer import gen_benign, mix_traces
from .sim.runner import run_attack
from .sim.victim import SCORE_MODE, ToyVictim, pick_victim_sample
from .traces import QueryRecord

SUITES = ("nonadaptive", "blinding", "oars", "collab", "ablation", "perf")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 6))
    return str(x)


def _fresh_engine(cfg: RunConfig, model, out_dir: Path, tag: str, **overrides):
    init_feats = overrides.pop("init_features")
    det = overrides.pop("det_cfg", cfg.detector)
    graph = overrides.pop("graph_cfg", cfg.graph)
    return make_engine(
        cfg.extractor, graph, det, model, init_feats,
        disk_root=out_dir / f"disk-{tag}", **overrides,
    )


def suite_nonadaptive(cfg: RunConfig, model: GcnModel, out_dir: Path,
                      runs_per_alg: int = 10, attack_cap: int = 250,
                      algs=ALGORITHMS) -> list[dict]:
    """Table-3 analogue: coverage / precision / FPR / TTD per generator at
    the configured anomaly rate, averaged over seeded runs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_provenance(cfg, out_dir)
    init_feats = build_init_features(
        cfg.extractor, cfg.init_count, cfg.init_seed, cfg.sim.image_size, cfg.sim.family_seed
    )
    rows = []
    summary = []
    for alg in algs:
        cells = []
        for run in range(runs_per_alg):
            seed = cfg.seed * 10_000 + run * 100 + hash(alg) % 97
            trace = mixed_attack_trace(
                alg, seed=seed, rate=cfg.sim.anomaly_rate, attack_cap=attack_cap,
                size=cfg.sim.image_size, family_seed=cfg.sim.family_seed,
            )
            eng = _fresh_engine(cfg, model, out_dir, f"{alg}-{run}", init_features=init_feats)
            rr = replay_trace(eng, trace)
            m = rr.metrics
            cells.append(m)
            rows.append([alg, run, _fmt(m.coverage), _fmt(m.precision), _fmt(m.fpr),
                         _fmt(m.mean_ttd), m.attack_queries, m.benign_queries])
        summary.append({
            "alg": alg,
            "coverage": float(np.mean([c.coverage for c in cells])),
            "precision": float(np.mean([c.precision for c in cells])),
            "fpr": float(np.mean([c.fpr for c in cells])),
            "mean_ttd": float(np.mean([c.mean_ttd for c in cells if c.mean_ttd is not None])),
            "detected_runs": sum(c.detected_runs for c in cells),
            "runs": runs_per_alg,
        })
    _write_csv(out_dir / "nonadaptive_runs.csv",
               ["alg", "run", "coverage", "precision", "fpr", "mean_ttd",
                "attack_queries", "benign_queries"], rows)
    _write_csv(out_dir / "nonadaptive_summary.csv",
               ["alg", "coverage", "precision", "fpr", "mean_ttd", "detected_runs", "runs"],
               [[s["alg"], _fmt(s["coverage"]), _fmt(s["precision"]), _fmt(s["fpr"]),
                 _fmt(s["mean_ttd"]), s["detected_runs"], s["runs"]] for s in summary])
    return summary


def _interactive_runs(cfg: RunConfig, model: GcnModel, out_dir: Path, alg: str,
                      strategy: str, defense_kind: str, n_runs: int,
                      init_feats, query_cap: int) -> list:
    family = BenignFamily(cfg.sim.family_seed, cfg.sim.image_size)
    outs = []
    for run in range(n_runs):
        victim = ToyVictim.seeded(cfg.sim.victim_seed, size=cfg.sim.image_size, mode=SCORE_MODE)
        rng = SeededRng(cfg.seed * 1000 + run, ("victim-pick", alg, strategy))
        img, label = pick_victim_sample(victim, rng, family, sigma=cfg.sim.sigma)
        state = AttackState(
            x_vic=img.astype(np.float64) / 255.0, true_label=label,
            seed=cfg.seed * 7000 + run, sigma=cfg.sim.sigma,
            query_cap=query_cap, family=family, strategy=strategy,
        )
        if defense_kind == "qpa":
            defense = _fresh_engine(cfg, model, out_dir, f"{alg}-{strategy}-{run}",
                                    init_features=init_feats)
        else:
            defense = BaselineSdm(cfg.extractor, cfg.sim.baseline_threshold)
        outs.append(run_attack(alg, victim, defense, state, run_id=run, strategy=strategy))
    return outs


def suite_adaptive(cfg: RunConfig, model: GcnModel, out_dir: Path, strategy: str,
                   runs_per_alg: int = 5, algs=ALGORITHMS, query_cap: int | None = None) -> list[dict]:
    """Table-4 analogue for one adaptive strategy: attack success rate per
    generator against the full defense and against the threshold baseline."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_provenance(cfg, out_dir)
    cap = query_cap or cfg.sim.query_cap
    init_feats = build_init_features(
        cfg.extractor, cfg.init_count, cfg.init_seed, cfg.sim.image_size, cfg.sim.family_seed
    )
    rows = []
    summary = []
    for alg in algs:
        cell = {"alg": alg, "strategy": strategy}
        for defense_kind in ("qpa", "baseline"):
            outs = _interactive_runs(cfg, model, out_dir, alg, strategy, defense_kind,
                                     runs_per_alg, init_feats, cap)
            asr = sum(o.success for o in outs) / len(outs)
            cell[f"asr_{defense_kind}"] = asr
            cell[f"queries_{defense_kind}"] = float(np.mean([o.queries for o in outs]))
            for o in outs:
                rows.append([alg, strategy, defense_kind, o.run_id, int(o.success),
                             o.reason, o.queries, o.accepted, o.rejected,
                             _fmt(o.best_distance if np.isfinite(o.best_distance) else None)])
        summary.append(cell)
    _write_csv(out_dir / f"{strategy}_runs.csv",
               ["alg", "strategy", "defense", "run", "success", "reason",
                "queries", "accepted", "rejected", "best_distance"], rows)
    _write_csv(out_dir / f"{strategy}_summary.csv",
               ["alg", "strategy", "asr_qpa", "asr_baseline", "queries_qpa", "queries_baseline"],
               [[c["alg"], strategy, _fmt(c["asr_qpa"]), _fmt(c["asr_baseline"]),
                 _fmt(c["queries_qpa"]), _fmt(c["queries_baseline"])] for c in summary])
    return summary


def suite_collab(cfg: RunConfig, model: GcnModel, out_dir: Path,
                 n_attacks: int = 4, repeats: int = 3, attack_cap: int = 200) -> list[dict]:
    """Collaborative attacks: several simultaneous runs on the same victim
    or on different victims, mixed into benign traffic and replayed."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_provenance(cfg, out_dir)
    init_feats = build_init_features(
        cfg.extractor, cfg.init_count, cfg.init_seed, cfg.sim.image_size, cfg.sim.family_seed
    )
    rows = []
    summary = []
    for mode in ("same-victim", "different-victims"):
        cells = []
        for rep in range(repeats):
            rng = SeededRng(cfg.seed + rep, ("collab", mode))
            pool = [ALGORITHMS[int(i)] for i in rng.choice(len(ALGORITHMS), n_attacks)]
            runs = []
            for ridx, alg in enumerate(pool):
                # same victim sample: share the pick seed across runs
                pick_seed = cfg.seed * 555 + rep if mode == "same-victim" else cfg.seed * 555 + rep * 19 + ridx
                out = record_attack_run(
                    alg, seed=pick_seed, run_id=ridx, size=cfg.sim.image_size,
                    family_seed=cfg.sim.family_seed, victim_seed=cfg.sim.victim_seed,
                    query_cap=attack_cap,
                )
                runs.append(out.records)
            n_attack = sum(len(r) for r in runs)
            benign = gen_benign(
                int(round(n_attack * (1 - cfg.sim.anomaly_rate) / cfg.sim.anomaly_rate)),
                seed=cfg.seed + 90_000 + rep, size=cfg.sim.image_size,
                family_seed=cfg.sim.family_seed,
            )
            trace = mix_traces(benign, runs, cfg.sim.anomaly_rate, seed=cfg.seed + rep)
            eng = _fresh_engine(cfg, model, out_dir, f"{mode}-{rep}", init_features=init_feats)
            rr = replay_trace(eng, trace)
            m = rr.metrics
            cells.append(m)
            rows.append([mode, rep, "+".join(pool), _fmt(m.precision), _fmt(m.coverage),
                         _fmt(m.fpr), m.attack_queries, m.benign_queries])
        summary.append({
            "mode": mode,
            "precision": float(np.mean([c.precision for c in cells])),
            "recall": float(np.mean([c.coverage for c in cells])),
            "fpr": float(np.mean([c.fpr for c in cells])),
        })
    _write_csv(out_dir / "collab_runs.csv",
               ["mode", "repeat", "attacks", "precision", "recall", "fpr",
                "attack_queries", "benign_queries"], rows)
    _write_csv(out_dir / "collab_summary.csv",
               ["mode", "precision", "recall", "fpr"],
               [[s["mode"], _fmt(s["precision"]), _fmt(s["recall"]), _fmt(s["fpr"])] for s in summary])
    return summary


def suite_ablation(cfg: RunConfig, model: GcnModel, out_dir: Path,
                   attack_cap: int = 200, near_dup_bases: int = 12) -> dict:
    """Component knock-outs on one fixed mixed trace: full pipeline vs
    no-classifier vs no-threshold."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_provenance(cfg, out_dir)
    init_feats = build_init_features(
        cfg.extractor, cfg.init_count, cfg.init_seed, cfg.sim.image_size, cfg.sim.family_seed
    )
    # fixed trace: one attack run + benign with near-duplicate bursts mixed in
    atk = record_attack_run("hsja", seed=cfg.seed + 41, run_id=0, size=cfg.sim.image_size,
                            family_seed=cfg.sim.family_seed, victim_seed=cfg.sim.victim_seed,
                            query_cap=attack_cap)
    n_attack = len(atk.records)
    n_benign = int(round(n_attack * (1 - cfg.sim.anomaly_rate) / cfg.sim.anomaly_rate))
    n_near = near_dup_bases * 30
    benign = gen_benign(n_benign - n_near, seed=cfg.seed + 91_000, size=cfg.sim.image_size,
                        family_seed=cfg.sim.family_seed)
    near = gen_benign(n_near, seed=cfg.seed + 92_000, size=cfg.sim.image_size,
                      near_dup=True, family_seed=cfg.sim.family_seed)
    # splice near-duplicate bursts into the benign stream deterministically
    rngmix = SeededRng(cfg.seed, "ablation-splice")
    positions = sorted(int(p) for p in rngmix.choice(len(benign), near_dup_bases))
    merged_benign = []
    near_iter = iter(range(near_dup_bases))
    for i, rec in enumerate(benign):
        merged_benign.append(rec)
        if i in positions:
            base_idx = next(near_iter)
            merged_benign.extend(near[base_idx * 30 : (base_idx + 1) * 30])
    trace = mix_traces(merged_benign, [atk.records], cfg.sim.anomaly_rate, seed=cfg.seed + 3)

    variants = {
        "full": dict(det_cfg=cfg.detector, graph_cfg=cfg.graph),
        "no-classifier": dict(
            det_cfg=DetectorConfig(
                alpha=cfg.detector.alpha,
                classifier_threshold=cfg.detector.classifier_threshold,
                include_singletons=cfg.detector.include_singletons,
                use_classifier=False,
            ),
            graph_cfg=cfg.graph,
        ),
        "no-threshold": dict(
            det_cfg=cfg.detector,
            graph_cfg=GraphConfig(
                link_threshold=0.0,
                init_count=cfg.graph.init_count,
                top_k=cfg.graph.top_k,
                min_graph_size=cfg.graph.min_graph_size,
                evict_watermark=cfg.graph.evict_watermark,
                reset_every_queries=cfg.graph.reset_every_queries,
                reset_period_hours=cfg.graph.reset_period_hours,
            ),
        ),
    }
    results = {}
    rows = []
    for name, kw in variants.items():
        use_model = model if kw["det_cfg"].use_classifier else None
        eng = make_engine(cfg.extractor, kw["graph_cfg"], kw["det_cfg"], use_model,
                          init_feats, disk_root=out_dir / f"disk-{name}")
        rr = replay_trace(eng, trace)
        m = rr.metrics
        results[name] = m
        rows.append([name, _fmt(m.precision), _fmt(m.coverage), _fmt(m.fpr),
                     m.rejected, m.attack_queries, m.benign_queries])
        write_verdicts(out_dir / f"verdicts-{name}.jsonl", rr.verdicts)
    _write_csv(out_dir / "ablation.csv",
               ["variant", "precision", "recall", "fpr", "rejected",
                "attack_queries", "benign_queries"], rows)
    return results


def suite_perf(cfg: RunConfig, model: GcnModel, out_dir: Path,
               stream_len: int = 50_000, window: int = 500) -> dict:
    """Bounded-latency check: a long benign stream with eviction on vs off,
    plus mean latency per query window (timing files, not deterministic)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_provenance(cfg, out_dir)
    init_feats = build_init_features(
        cfg.extractor, cfg.init_count, cfg.init_seed, cfg.sim.image_size, cfg.sim.family_seed
    )
    stream = gen_benign(stream_len, seed=cfg.seed + 70_000, size=cfg.sim.image_size,
                        family_seed=cfg.sim.family_seed)
    results = {}
    for evict in (True, False):
        tag = "evict-on" if evict else "evict-off"
        eng = make_engine(cfg.extractor, cfg.graph, cfg.detector, model, init_feats,
                          disk_root=out_dir / f"disk-{tag}", eviction_enabled=evict,
                          record_latency=True)
        t0 = time.perf_counter()
        for rec in stream:
            eng.process(rec)
        elapsed = time.perf_counter() - t0
        lat = np.asarray(eng.stats.latencies_ms)
        first = lat[:1000]
        last = lat[-1000:]
        results[tag] = {
            "throughput_qps": stream_len / elapsed,
            "p50_first_1k_ms": float(np.percentile(first, 50)),
            "p50_final_1k_ms": float(np.percentile(last, 50)),
            "p50_ratio": float(np.percentile(last, 50) / np.percentile(first, 50)),
            "in_memory_nodes": eng.manager.memory_footprint().in_memory_nodes,
            "disk_records": eng.manager.memory_footprint().disk_records,
        }
        windows = [
            [i, _fmt(float(np.mean(lat[i : i + window])))]
            for i in range(0, stream_len, window)
        ]
        _write_csv(out_dir / f"latency-windows-{tag}.csv", ["window_start", "mean_ms"], windows)
    _write_csv(out_dir / "perf_summary.csv",
               ["variant", "throughput_qps", "p50_first_1k_ms", "p50_final_1k_ms",
                "p50_ratio", "in_memory_nodes", "disk_records"],
               [[tag, _fmt(r["throughput_qps"]), _fmt(r["p50_first_1k_ms"]),
                 _fmt(r["p50_final_1k_ms"]), _fmt(r["p50_ratio"]),
                 r["in_memory_nodes"], r["disk_records"]] for tag, r in results.items()])
    return results


def run_suite(name: str, cfg: RunConfig, model: GcnModel, out_dir: Path, **kw):
    if name == "nonadaptive":
        return suite_nonadaptive(cfg, model, out_dir, **kw)
    if name == "blinding":
        return suite_adaptive(cfg, model, out_dir, "blinding", **kw)
    if name == "oars":
        return suite_adaptive(cfg, model, out_dir, "oars", **kw)
    if name == "collab":
        return suite_collab(cfg, model, out_dir, **kw)
    if name == "ablation":
        return suite_ablation(cfg, model, out_dir, **kw)
    if name == "perf":
        return suite_perf(cfg, model, out_dir, **kw)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
