"""Detection and performance metrics over trace/verdict pairs.

Everything here is recomputable from the trace file (ground truth) and the
verdicts file (decisions); the engine is not consulted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import Verdict
from .traces import QueryRecord, read_trace


@dataclass
class RunMetrics:
    run: int
    alg: str
    queries: int
    rejected: int
    ttd: int | None  # attack-query count until first rejection; None if never

    @property
    def coverage(self) -> float:
        return self.rejected / self.queries if self.queries else 0.0


@dataclass
class MetricsReport:
    total_queries: int = 0
    attack_queries: int = 0
    benign_queries: int = 0
    rejected: int = 0
    rejected_attack: int = 0
    rejected_benign: int = 0
    runs: list[RunMetrics] = field(default_factory=list)
    asr: float | None = None
    throughput_qps: float | None = None
    latency_p50_ms: float | None = None
    latency_p95_ms: float | None = None
    latency_p99_ms: float | None = None

    @property
    def coverage(self) -> float:
        """Fraction of attack queries rejected."""
        return self.rejected_attack / self.attack_queries if self.attack_queries else 0.0

    @property
    def precision(self) -> float:
        """Rejected-and-attack over rejected; 1.0 when nothing was rejected."""
        return self.rejected_attack / self.rejected if self.rejected else 1.0

    @property
    def fpr(self) -> float:
        """Fraction of benign queries rejected."""
        return self.rejected_benign / self.benign_queries if self.benign_queries else 0.0

    @property
    def mean_coverage_per_run(self) -> float:
        if not self.runs:
            return 0.0
        return float(np.mean([r.coverage for r in self.runs]))

    @property
    def detected_runs(self) -> int:
        return sum(1 for r in self.runs if r.ttd is not None)

    @property
    def mean_ttd(self) -> float | None:
        ttds = [r.ttd for r in self.runs if r.ttd is not None]
        return float(np.mean(ttds)) if ttds else None


def compute_metrics(
    records: list[QueryRecord],
    verdicts: list[Verdict],
    successes: dict[int, bool] | None = None,
    latencies_ms: list[float] | None = None,
    elapsed_s: float | None = None,
) -> MetricsReport:
    if len(records) != len(verdicts):
        raise ValueError(f"{len(records)} records vs {len(verdicts)} verdicts")
    rep = MetricsReport(total_queries=len(records))
    per_run: dict[int, RunMetrics] = {}
    for rec, ver in zip(records, verdicts):
        rejected = ver.decision == "reject"
        if rejected:
            rep.rejected += 1
        if rec.is_attack:
            rep.attack_queries += 1
            rm = per_run.get(rec.label.run)
            if rm is None:
                rm = RunMetrics(run=rec.label.run, alg=rec.label.alg, queries=0, rejected=0, ttd=None)
                per_run[rec.label.run] = rm
            rm.queries += 1
            if rejected:
                rep.rejected_attack += 1
                rm.rejected += 1
                if rm.ttd is None:
                    rm.ttd = rm.queries
        else:
            rep.benign_queries += 1
            if rejected:
                rep.rejected_benign += 1
    rep.runs = [per_run[k] for k in sorted(per_run)]
    if successes is not None and successes:
        rep.asr = sum(bool(v) for v in successes.values()) / len(successes)
    if latencies_ms:
        arr = np.asarray(latencies_ms)
        rep.latency_p50_ms = float(np.percentile(arr, 50))
        rep.latency_p95_ms = float(np.percentile(arr, 95))
        rep.latency_p99_ms = float(np.percentile(arr, 99))
    if elapsed_s and elapsed_s > 0:
        rep.throughput_qps = len(records) / elapsed_s
    return rep


# ---------------------------------------------------------------------------
# Verdict files
# ---------------------------------------------------------------------------


def verdict_to_json(v: Verdict) -> str:
    return json.dumps(
        {
            "id": v.query_id,
            "decision": v.decision,
            "component": v.component_id,
            "pas": v.component_pas,
            "score": v.classifier_score,
            "reason": v.reason,
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def verdict_from_json(line: str) -> Verdict:
    doc = json.loads(line)
    return Verdict(
        query_id=doc["id"],
        decision=doc["decision"],
        component_id=doc["component"],
        component_pas=doc["pas"],
        classifier_score=doc["score"],
        reason=doc["reason"],
    )


def write_verdicts(path: Path | str, verdicts: list[Verdict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(verdict_to_json(v))
            fh.write("\n")


def read_verdicts(path: Path | str) -> list[Verdict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(verdict_from_json(line))
    return out


def recompute_from_files(trace_path: Path | str, verdicts_path: Path | str) -> MetricsReport:
    """Independent recomputation used to reconcile reported metrics."""
    records = list(read_trace(trace_path))
    verdicts = read_verdicts(verdicts_path)
    return compute_metrics(records, verdicts)
