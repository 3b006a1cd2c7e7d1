"""The online serve loop glue: extract, insert, detect, verdict, manage.

`DefenseEngine` is the full pipeline; `BaselineSdm` is the single-query
similarity-threshold defense used as the comparison point; `AcceptAll`
is the no-defense stub the simulator uses for recording raw attack runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .detector import Detector, DetectorConfig, GcnModel, Verdict
from .errors import QpaError
from .features import ExtractorParams, FeatureVector, extract
from .graph import GraphConfig, NodeMeta
from .storage import StoreManager
from .traces import QueryRecord

REASON_ERROR = "error"


@dataclass
class EngineStats:
    processed: int = 0
    rejected: int = 0
    errors: int = 0
    resets: int = 0
    latencies_ms: list[float] = field(default_factory=list)


class DefenseEngine:
    """Provenance-graph defense over one query stream."""

    def __init__(
        self,
        params: ExtractorParams,
        graph_cfg: GraphConfig,
        det_cfg: DetectorConfig,
        model: GcnModel | None,
        init_features: list[FeatureVector],
        disk_root=None,
        eviction_enabled: bool = True,
        reset_mode: str = "queries",  # "queries" | "wallclock" | "off"
        record_latency: bool = False,
    ):
        self.params = params
        self.graph_cfg = graph_cfg
        self.reset_mode = reset_mode
        self.record_latency = record_latency
        self.manager = StoreManager(params, graph_cfg, disk_root, eviction_enabled)
        self.manager.bootstrap(init_features)
        self.detector = Detector(det_cfg, model, graph_cfg.min_graph_size)
        self.stats = EngineStats()
        self._epoch_queries = 0

    @property
    def store(self):
        return self.manager.store

    @property
    def threshold(self) -> float:
        return self.manager.epoch_state.threshold

    def _maybe_reset(self, ts_ms: int) -> None:
        due = False
        if self.reset_mode == "queries":
            due = self._epoch_queries >= self.graph_cfg.reset_every_queries
        elif self.reset_mode == "wallclock":
            started = self.manager.epoch_state.started_at_ms
            period_ms = self.graph_cfg.reset_period_hours * 3600.0 * 1000.0
            due = started > 0 and ts_ms - started >= period_ms
        if due:
            self.reset(ts_ms)

    def reset(self, ts_ms: int = 0) -> None:
        self.manager.reset(ts_ms)
        self.detector.reset()
        self._epoch_queries = 0
        self.stats.resets += 1

    def process(self, record: QueryRecord) -> Verdict:
        """Full per-query pipeline; errors yield a reject verdict with an
        error reason and the stream continues."""
        t0 = time.perf_counter() if self.record_latency else 0.0
        self._maybe_reset(record.ts_ms)
        if self._epoch_queries == 0 and self.manager.epoch_state.started_at_ms == 0:
            # anchor the epoch clock to the first query's timestamp
            self.manager.epoch_state.started_at_ms = record.ts_ms
        try:
            feature = extract(record.image, self.params)
        except QpaError:
            self.stats.errors += 1
            self.stats.processed += 1
            self._epoch_queries += 1
            return Verdict(record.query_id, "reject", -1, 0.0, None, REASON_ERROR)
        meta = NodeMeta(query_id=record.query_id, ts_ms=record.ts_ms)
        result = self.store.insert(feature, meta)
        if result.edge is not None:
            self.detector.detect(self.store, self.stats.processed)
        verdict = self.detector.verdict_for(record.query_id, result, self.store)
        if result.edge is not None and self.manager.should_evict():
            self.manager.evict(self.detector.anomalies.component_ids(), record.ts_ms)
        self.stats.processed += 1
        self._epoch_queries += 1
        if verdict.decision == "reject":
            self.stats.rejected += 1
        if self.record_latency:
            self.stats.latencies_ms.append((time.perf_counter() - t0) * 1e3)
        return verdict


class BaselineSdm:
    """Single-query threshold defense: reject when the max similarity to any
    historical query reaches q. History grows without bound, by design."""

    def __init__(self, params: ExtractorParams, threshold: float = 0.5):
        if not 0.0 < threshold < 1.0:
            raise QpaError(f"baseline threshold must be in (0,1), got {threshold}")
        self.params = params
        self.threshold = threshold
        self._L = params.length
        self._feat = np.zeros((4096, self._L), dtype=np.int64)
        self._len = np.zeros(4096, dtype=np.int32)
        self._n = 0
        self.stats = EngineStats()
        self.record_latency = False

    def _append(self, fv: FeatureVector) -> None:
        if self._n >= self._feat.shape[0]:
            cap = 2 * self._feat.shape[0]
            for name in ("_feat", "_len"):
                old = getattr(self, name)
                fresh = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
                fresh[: old.shape[0]] = old
                setattr(self, name, fresh)
        row = fv.hashes
        self._feat[self._n, : row.shape[0]] = row
        self._feat[self._n, row.shape[0] :] = -1
        self._len[self._n] = row.shape[0]
        self._n += 1

    def max_similarity(self, fv: FeatureVector) -> float:
        if self._n == 0:
            return 0.0
        if fv.positionwise:
            counts = kernels.count_equal_rows(self._feat, self._n, fv.hashes)
            sims = counts / float(self._L)
        else:
            counts = kernels.intersect_count_rows(self._feat, self._len, self._n, fv.hashes)
            sims = counts / np.maximum(np.maximum(self._len[: self._n], len(fv)), 1)
        return float(sims.max())

    def process(self, record: QueryRecord) -> Verdict:
        t0 = time.perf_counter() if self.record_latency else 0.0
        try:
            fv = extract(record.image, self.params)
        except QpaError:
            self.stats.errors += 1
            self.stats.processed += 1
            return Verdict(record.query_id, "reject", -1, 0.0, None, REASON_ERROR)
        sim = self.max_similarity(fv)
        self._append(fv)
        decision = "reject" if sim >= self.threshold else "accept"
        self.stats.processed += 1
        if decision == "reject":
            self.stats.rejected += 1
        if self.record_latency:
            self.stats.latencies_ms.append((time.perf_counter() - t0) * 1e3)
        return Verdict(record.query_id, decision, -1, sim, None, "baseline")


class AcceptAll:
    """No-defense stub: every query is accepted."""

    def __init__(self):
        self.stats = EngineStats()

    def process(self, record: QueryRecord) -> Verdict:
        self.stats.processed += 1
        return Verdict(record.query_id, "accept", -1, 0.0, None, "accept-all")
