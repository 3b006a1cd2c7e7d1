"""Command-line interface: trace generation, classifier training, the
online serve loop (file replay or socket), and evaluation suites.

    qpa gen    --kind benign|near-dup|attack|mixed ...
    qpa train  --out-dir DIR
    qpa serve  --trace FILE | --socket HOST:PORT ...
    qpa eval   --suite nonadaptive|blinding|oars|collab|ablation|perf ...
"""

from __future__ import annotations

import argparse
import json
import socket as socketlib
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .config import RunConfig, load_config, write_provenance
from .detector import DetectorConfig, GcnModel
from .engine import BaselineSdm
from .graph import GraphConfig
from .harness import (
    build_init_features,
    build_training_corpus,
    load_corpus,
    make_engine,
    mixed_attack_trace,
    record_attack_run,
    replay_trace,
    save_corpus,
    train_and_save,
)
from .metrics import compute_metrics, write_verdicts
from .sim.attacks import ALGORITHMS
from .sim.mixer import gen_benign
from .suites import SUITES, run_suite
from .traces import QueryRecord, read_trace, record_from_json, write_trace


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _apply_ablations(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "no_classifier", False):
        cfg.detector = DetectorConfig(
            alpha=cfg.detector.alpha,
            classifier_threshold=cfg.detector.classifier_threshold,
            include_singletons=cfg.detector.include_singletons,
            use_classifier=False,
        )
    if getattr(args, "no_threshold", False):
        g = cfg.graph
        cfg.graph = GraphConfig(
            link_threshold=0.0, init_count=g.init_count, top_k=g.top_k,
            min_graph_size=g.min_graph_size, evict_watermark=g.evict_watermark,
            reset_every_queries=g.reset_every_queries,
            reset_period_hours=g.reset_period_hours,
        )
    return cfg


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.trace_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind in ("benign", "near-dup"):
        records = gen_benign(
            args.count, seed=cfg.seed, size=cfg.sim.image_size,
            near_dup=args.kind == "near-dup", family_seed=cfg.sim.family_seed,
        )
    elif args.kind == "attack":
        run = record_attack_run(
            args.alg, seed=cfg.seed, run_id=0, size=cfg.sim.image_size,
            family_seed=cfg.sim.family_seed, victim_seed=cfg.sim.victim_seed,
            sigma=cfg.sim.sigma, query_cap=args.count,
        )
        records = run.records
    elif args.kind == "mixed":
        records = mixed_attack_trace(
            args.alg, seed=cfg.seed, rate=args.rate, attack_cap=args.count,
            size=cfg.sim.image_size, family_seed=cfg.sim.family_seed,
        )
    else:
        raise SystemExit(f"unknown kind {args.kind!r}")
    n = write_trace(out, records)
    print(f"wrote {n} records to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out_dir = cfg.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    write_provenance(cfg, out_dir)
    corpus_path = out_dir / "corpus.jsonl"
    if args.reuse_corpus and corpus_path.exists():
        corpus = load_corpus(corpus_path)
        print(f"loaded corpus: {len(corpus)} graphs")
    else:
        init_feats = build_init_features(
            cfg.extractor, cfg.init_count, cfg.init_seed,
            cfg.sim.image_size, cfg.sim.family_seed,
        )
        corpus = build_training_corpus(
            cfg.extractor, cfg.graph, init_feats, seed=cfg.seed,
            size=cfg.sim.image_size, family_seed=cfg.sim.family_seed,
        )
        save_corpus(corpus, corpus_path)
        print(f"built corpus: {len(corpus)} graphs")
    model_path = out_dir / cfg.model_path
    model, report = train_and_save(corpus, model_path, seed=cfg.seed,
                                   epochs=args.epochs, learning_rate=args.learning_rate)
    (out_dir / "train_report.json").write_text(
        json.dumps(asdict(report), sort_keys=True, indent=2), encoding="utf-8"
    )
    print(f"model -> {model_path}")
    print(f"test accuracy {report.test_accuracy:.3f} "
          f"(benign {report.test_accuracy_benign:.3f}, anomaly {report.test_accuracy_anomaly:.3f})")
    return 0


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def _build_defense(cfg: RunConfig, args, out_dir: Path):
    if args.baseline:
        return BaselineSdm(cfg.extractor, cfg.sim.baseline_threshold)
    model = None
    if cfg.detector.use_classifier:
        model = GcnModel.load(args.model)
    init_feats = build_init_features(
        cfg.extractor, cfg.init_count, cfg.init_seed, cfg.sim.image_size, cfg.sim.family_seed
    )
    return make_engine(
        cfg.extractor, cfg.graph, cfg.detector, model, init_feats,
        disk_root=out_dir / "disk", record_latency=True,
        reset_mode="wallclock" if args.socket else "queries",
    )


def cmd_serve(args) -> int:
    cfg = _apply_ablations(_load_cfg(args), args)
    out_dir = cfg.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    write_provenance(cfg, out_dir)
    defense = _build_defense(cfg, args, out_dir)
    if args.socket:
        return _serve_socket(defense, args.socket)
    records = list(read_trace(args.trace))
    verdicts = []
    t0 = time.perf_counter()
    for rec in records:
        verdicts.append(defense.process(rec))
    elapsed = time.perf_counter() - t0
    write_verdicts(out_dir / "verdicts.jsonl", verdicts)
    latencies = defense.stats.latencies_ms if getattr(defense, "record_latency", False) else None
    metrics = compute_metrics(records, verdicts, latencies_ms=latencies, elapsed_s=elapsed)
    _write_metrics_csv(out_dir / "metrics.csv", metrics)
    _write_timing_csv(out_dir / "timing.csv", metrics)
    print(f"{len(records)} queries in {elapsed:.1f}s "
          f"({len(records)/elapsed:.0f} q/s); rejected {metrics.rejected}; "
          f"coverage {metrics.coverage:.3f} precision {metrics.precision:.3f} "
          f"fpr {metrics.fpr:.5f}")
    return 0


def _write_metrics_csv(path: Path, m) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["total_queries", m.total_queries])
        w.writerow(["attack_queries", m.attack_queries])
        w.writerow(["benign_queries", m.benign_queries])
        w.writerow(["rejected", m.rejected])
        w.writerow(["coverage", repr(round(m.coverage, 6))])
        w.writerow(["precision", repr(round(m.precision, 6))])
        w.writerow(["fpr", repr(round(m.fpr, 6))])
        w.writerow(["mean_ttd", "" if m.mean_ttd is None else repr(round(m.mean_ttd, 3))])


def _write_timing_csv(path: Path, m) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["throughput_qps", "" if m.throughput_qps is None else f"{m.throughput_qps:.1f}"])
        for name in ("latency_p50_ms", "latency_p95_ms", "latency_p99_ms"):
            v = getattr(m, name)
            w.writerow([name, "" if v is None else f"{v:.3f}"])


def _serve_socket(defense, endpoint: str) -> int:
    host, _, port = endpoint.rpartition(":")
    host = host or "127.0.0.1"
    srv = socketlib.socket(socketlib.AF_INET, socketlib.SOCK_STREAM)
    srv.setsockopt(socketlib.SOL_SOCKET, socketlib.SO_REUSEADDR, 1)
    srv.bind((host, int(port)))
    srv.listen(1)
    print(f"listening on {host}:{port}")
    conn, peer = srv.accept()
    print(f"connection from {peer}")
    buf = b""
    try:
        with conn:
            while True:
                chunk = conn.recv(65536)
                if not chunk:
                    break  # graceful drain: peer closed
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    try:
                        rec = record_from_json(line.decode("utf-8"))
                        verdict = defense.process(rec)
                        reply = {"id": verdict.query_id, "decision": verdict.decision}
                    except Exception as exc:  # malformed record: error verdict, keep going
                        reply = {"id": None, "decision": "reject", "error": str(exc)}
                    conn.sendall((json.dumps(reply, sort_keys=True) + "\n").encode("utf-8"))
    finally:
        srv.close()
    print(f"drained; processed {defense.stats.processed} queries")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out_dir = cfg.resolved_out_dir() / args.suite
    model = GcnModel.load(args.model)
    kw = {}
    if args.runs is not None:
        if args.suite in ("nonadaptive", "blinding", "oars"):
            kw["runs_per_alg"] = args.runs
        elif args.suite == "collab":
            kw["repeats"] = args.runs
    if args.algs:
        if args.suite not in ("nonadaptive", "blinding", "oars"):
            raise SystemExit("--algs only applies to nonadaptive/blinding/oars")
        kw["algs"] = tuple(args.algs.split(","))
    if args.suite == "perf" and args.stream_len:
        kw["stream_len"] = args.stream_len
    result = run_suite(args.suite, cfg, model, out_dir, **kw)
    print(f"suite {args.suite} -> {out_dir}")
    print(json.dumps(result, indent=2, default=str)[:2000])
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qpa", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", type=Path, default=None, help="INI config file")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a trace file")
    g.add_argument("--kind", required=True, choices=("benign", "near-dup", "attack", "mixed"))
    g.add_argument("--alg", default="hsja", choices=ALGORITHMS)
    g.add_argument("--count", type=int, default=10_000,
                   help="benign count, or attack query cap for attack/mixed")
    g.add_argument("--rate", type=float, default=0.01, help="anomaly rate for mixed")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", dest="trace_out", required=True, help="output trace path")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="build the corpus and train the graph classifier")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=250)
    t.add_argument("--learning-rate", type=float, default=1.0)
    t.add_argument("--reuse-corpus", action="store_true")
    t.add_argument("--out", default=None, help="output directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("serve", help="serve verdicts over a trace file or socket")
    s.add_argument("--trace", type=Path, help="JSONL trace to replay")
    s.add_argument("--socket", default=None, help="HOST:PORT to listen on")
    s.add_argument("--model", type=Path, default=Path("model.json"))
    s.add_argument("--no-classifier", action="store_true")
    s.add_argument("--no-threshold", action="store_true")
    s.add_argument("--baseline", action="store_true",
                   help="single-query threshold defense instead of the graph engine")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_serve)

    e = sub.add_parser("eval", help="run an evaluation suite")
    e.add_argument("--suite", required=True, choices=SUITES)
    e.add_argument("--model", type=Path, default=Path("model.json"))
    e.add_argument("--runs", type=int, default=None)
    e.add_argument("--algs", default=None, help="comma-separated generator subset")
    e.add_argument("--stream-len", type=int, default=None, help="perf suite stream length")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve" and not args.trace and not args.socket:
        raise SystemExit("serve needs --trace or --socket")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
