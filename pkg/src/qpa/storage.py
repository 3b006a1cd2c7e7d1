"""Dynamic graph management: top-K retention, disk eviction, periodic reset.

Only the highest-scoring components (plus every flagged component) stay in
memory; the rest are serialized to an append-only per-epoch record log.
Each evicted node keeps its component edges and gains one reconciliation
edge to the most similar node already on disk, preserving cross-window
structure for offline analysis. Reset purges memory and disk, replays
graph initialization, and starts a new epoch.

Record layout (little-endian, length-prefixed):
    u32 record_len | u64 node_id | u32 epoch | u32 n_hashes |
    n_hashes x u32 | u32 n_adj | n_adj x (u64 node_id, f64 weight) |
    u64 timestamp_ms
The index file holds one (u64 node_id, u64 offset, u32 length) entry per
record, appended only after the record bytes are written: readers trust
the index, so a torn tail write is never visible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ContractError
from .features import ExtractorParams, FeatureVector
from .graph import Component, GraphConfig, NodeMeta, ProvenanceStore

_REC_HEAD = struct.Struct("<QII")
_ADJ_ENTRY = struct.Struct("<Qd")
_LEN_PREFIX = struct.Struct("<I")
_IDX_ENTRY = struct.Struct("<QQI")
_TS = struct.Struct("<Q")


@dataclass(frozen=True)
class DiskRecord:
    node_id: int
    epoch: int
    hashes: np.ndarray  # int64 holding uint32 values
    adjacency: tuple[tuple[int, float], ...]
    ts_ms: int

    def encode(self) -> bytes:
        body = bytearray()
        body += _REC_HEAD.pack(self.node_id, self.epoch, self.hashes.shape[0])
        body += np.asarray(self.hashes, dtype="<u4").tobytes()
        body += _LEN_PREFIX.pack(len(self.adjacency))
        for nid, w in self.adjacency:
            body += _ADJ_ENTRY.pack(nid, w)
        body += _TS.pack(self.ts_ms)
        return _LEN_PREFIX.pack(len(body)) + bytes(body)

    @classmethod
    def decode(cls, buf: bytes) -> "DiskRecord":
        node_id, epoch, n_hashes = _REC_HEAD.unpack_from(buf, 0)
        off = _REC_HEAD.size
        hashes = np.frombuffer(buf, dtype="<u4", count=n_hashes, offset=off).astype(np.int64)
        off += 4 * n_hashes
        (n_adj,) = _LEN_PREFIX.unpack_from(buf, off)
        off += _LEN_PREFIX.size
        adjacency = []
        for _ in range(n_adj):
            nid, w = _ADJ_ENTRY.unpack_from(buf, off)
            adjacency.append((nid, w))
            off += _ADJ_ENTRY.size
        (ts_ms,) = _TS.unpack_from(buf, off)
        return cls(node_id, epoch, hashes, tuple(adjacency), ts_ms)


class DiskStore:
    """Append-only per-epoch record log plus index, with an in-RAM feature
    mirror for reconciliation-edge lookups (purged on reset)."""

    def __init__(self, root: Path | str, feature_length: int):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._L = feature_length
        self.epoch = 0
        self._log = None
        self._idx = None
        self._offset = 0
        self.record_count = 0
        self._mirror_feat = np.zeros((1024, feature_length), dtype=np.int64)
        self._mirror_len = np.zeros(1024, dtype=np.int32)
        self._mirror_node = np.zeros(1024, dtype=np.int64)
        self._mirror_n = 0

    def _paths(self, epoch: int) -> tuple[Path, Path]:
        return (
            self.root / f"records.epoch{epoch:04d}.log",
            self.root / f"records.epoch{epoch:04d}.idx",
        )

    def begin_epoch(self, epoch: int) -> None:
        self.close()
        self.epoch = epoch
        log_path, idx_path = self._paths(epoch)
        self._log = open(log_path, "ab")
        self._idx = open(idx_path, "ab")
        self._offset = log_path.stat().st_size
        self.record_count = 0
        self._mirror_n = 0

    def append_batch(self, records: list[DiskRecord], features: list[tuple[np.ndarray, int]]) -> None:
        """Write one eviction batch: record bytes first, index entries after
        (the commit marker), then mirror the features for reconciliation."""
        if self._log is None:
            raise ContractError("disk store has no open epoch")
        entries = []
        for rec in records:
            blob = rec.encode()
            self._log.write(blob)
            entries.append((rec.node_id, self._offset, len(blob)))
            self._offset += len(blob)
        self._log.flush()
        for nid, off, ln in entries:
            self._idx.write(_IDX_ENTRY.pack(nid, off, ln))
        self._idx.flush()
        self.record_count += len(records)
        for rec, (row, ln) in zip(records, features):
            self._mirror_add(rec.node_id, row, ln)

    def _mirror_add(self, node_id: int, row: np.ndarray, ln: int) -> None:
        if self._mirror_n >= self._mirror_feat.shape[0]:
            cap = 2 * self._mirror_feat.shape[0]
            for name in ("_mirror_feat", "_mirror_len", "_mirror_node"):
                old = getattr(self, name)
                fresh = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
                fresh[: old.shape[0]] = old
                setattr(self, name, fresh)
        slot = self._mirror_n
        self._mirror_feat[slot, : row.shape[0]] = row[: self._L]
        self._mirror_len[slot] = ln
        self._mirror_node[slot] = node_id
        self._mirror_n += 1

    def nearest(self, feature: FeatureVector) -> tuple[int, float] | None:
        """Most similar already-evicted node this epoch, or None."""
        n = self._mirror_n
        if n == 0:
            return None
        if feature.positionwise:
            counts = kernels.count_equal_rows(self._mirror_feat, n, feature.hashes)
            sims = counts / float(self._L)
        else:
            counts = kernels.intersect_count_rows(
                self._mirror_feat, self._mirror_len, n, feature.hashes
            )
            sims = counts / np.maximum(np.maximum(self._mirror_len[:n], len(feature)), 1)
        best = int(np.argmax(sims))
        return int(self._mirror_node[best]), float(sims[best])

    def read_records(self, epoch: int | None = None) -> list[DiskRecord]:
        """Committed records for one epoch (offline analysis only)."""
        target = self.epoch if epoch is None else epoch
        log_path, idx_path = self._paths(target)
        if not idx_path.exists():
            return []
        if self._log is not None and target == self.epoch:
            self._log.flush()
            self._idx.flush()
        out = []
        idx_bytes = idx_path.read_bytes()
        with open(log_path, "rb") as fh:
            data = fh.read()
        for i in range(len(idx_bytes) // _IDX_ENTRY.size):
            _, off, ln = _IDX_ENTRY.unpack_from(idx_bytes, i * _IDX_ENTRY.size)
            body = data[off + _LEN_PREFIX.size : off + ln]
            out.append(DiskRecord.decode(body))
        return out

    def purge(self) -> None:
        """Delete every epoch's files (reset)."""
        self.close()
        for p in sorted(self.root.glob("records.epoch*")):
            p.unlink()
        self.record_count = 0
        self._mirror_n = 0

    def close(self) -> None:
        for fh in (self._log, self._idx):
            if fh is not None:
                fh.close()
        self._log = None
        self._idx = None


@dataclass
class EvictionReport:
    evicted_components: int = 0
    evicted_nodes: int = 0
    retained_components: int = 0
    skipped: bool = False
    error: str | None = None


@dataclass
class MemoryFootprint:
    in_memory_nodes: int
    in_memory_features: int
    in_memory_edges: int
    disk_records: int


@dataclass
class EpochState:
    epoch: int
    started_at_ms: int
    threshold: float


class StoreManager:
    """Eviction and reset policy around one provenance store."""

    def __init__(
        self,
        params: ExtractorParams,
        cfg: GraphConfig,
        disk_root: Path | str | None,
        eviction_enabled: bool = True,
    ):
        self.params = params
        self.cfg = cfg
        self.eviction_enabled = eviction_enabled and disk_root is not None
        self.disk = DiskStore(disk_root, params.length) if disk_root is not None else None
        self.store: ProvenanceStore | None = None
        self.epoch_state: EpochState | None = None
        self._init_features: list[FeatureVector] | None = None
        self.eviction_errors = 0
        self.eviction_passes = 0

    def bootstrap(self, init_features: list[FeatureVector], now_ms: int = 0) -> EpochState:
        """First-epoch initialization; keeps the init set for later resets."""
        self._init_features = list(init_features)
        return self._start_epoch(0, now_ms)

    def _start_epoch(self, epoch: int, now_ms: int) -> EpochState:
        store, threshold = ProvenanceStore.initialize(
            self._init_features, self.cfg, self.params
        )
        self.store = store
        if self.disk is not None:
            self.disk.begin_epoch(epoch)
        self.epoch_state = EpochState(epoch=epoch, started_at_ms=now_ms, threshold=threshold)
        return self.epoch_state

    def reset(self, now_ms: int = 0) -> EpochState:
        """Purge memory and disk, replay initialization, bump the epoch."""
        if self._init_features is None:
            raise ContractError("manager was never bootstrapped")
        epoch = self.epoch_state.epoch + 1 if self.epoch_state else 0
        if self.disk is not None:
            self.disk.purge()
            self.disk.begin_epoch(epoch)
        store, threshold = ProvenanceStore.initialize(
            self._init_features, self.cfg, self.params
        )
        self.store = store
        self.epoch_state = EpochState(epoch=epoch, started_at_ms=now_ms, threshold=threshold)
        return self.epoch_state

    # -- eviction ----------------------------------------------------------

    def should_evict(self) -> bool:
        return (
            self.eviction_enabled
            and self.store.live_node_count >= self.cfg.evict_watermark
            and self.store.live_component_count > self.cfg.top_k
        )

    def evict(self, flagged_ids, now_ms: int = 0) -> EvictionReport:
        """Keep the top-K components by PAS (ties: larger size, then older id)
        plus all flagged components; move everything else to disk."""
        store = self.store
        comps = list(store.components.values())
        if len(comps) <= self.cfg.top_k:
            return EvictionReport(skipped=True, retained_components=len(comps))
        ranked = sorted(comps, key=lambda c: (-c.pas, -c.size, c.cid))
        keep = {c.cid for c in ranked[: self.cfg.top_k]}
        keep.update(cid for cid in flagged_ids if cid in store.components)
        victims = [c for c in comps if c.cid not in keep]
        if not victims:
            return EvictionReport(skipped=True, retained_components=len(comps))

        records: list[DiskRecord] = []
        feats: list[tuple[np.ndarray, int]] = []
        victims_sorted = sorted(victims, key=lambda c: c.cid)
        for comp in victims_sorted:
            incident: dict[int, list[tuple[int, float]]] = {n: [] for n in comp.nodes}
            for e in comp.edges:
                incident[e.a].append((e.b, e.weight))
                incident[e.b].append((e.a, e.weight))
            for nid in sorted(comp.nodes):
                row, ln = store.node_feature_row(nid)
                fv = FeatureVector(
                    hashes=row[:ln],
                    extractor_id=self.params.extractor_id,
                    positionwise=self.params.kind == "piha",
                    length=self.params.length,
                )
                adjacency = list(incident[nid])
                recon = self.disk.nearest(fv) if self.disk is not None else None
                if recon is not None and recon[1] >= store.threshold:
                    adjacency.append(recon)
                records.append(
                    DiskRecord(
                        node_id=nid,
                        epoch=self.epoch_state.epoch,
                        hashes=row[:ln],
                        adjacency=tuple(adjacency),
                        ts_ms=now_ms,
                    )
                )
                feats.append((row, ln))
        try:
            if self.disk is not None:
                self.disk.append_batch(records, feats)
        except OSError as exc:
            self.eviction_errors += 1
            return EvictionReport(
                skipped=True,
                retained_components=len(comps),
                error=f"disk write failed, eviction aborted: {exc}",
            )
        store.remove_components([c.cid for c in victims_sorted])
        self.eviction_passes += 1
        return EvictionReport(
            evicted_components=len(victims_sorted),
            evicted_nodes=sum(c.size for c in victims_sorted),
            retained_components=store.live_component_count,
        )

    def memory_footprint(self) -> MemoryFootprint:
        store = self.store
        return MemoryFootprint(
            in_memory_nodes=store.live_node_count,
            in_memory_features=store.live_node_count,
            in_memory_edges=store.live_edge_count,
            disk_records=self.disk.record_count if self.disk is not None else 0,
        )
