import numpy as np
import pytest

from qpa.features import ExtractorParams, FeatureVector
from qpa.graph import GraphConfig, NodeMeta, ProvenanceStore
from qpa.numerics import SeededRng
from qpa.storage import DiskRecord, DiskStore, StoreManager


def _vec(params, values):
    return FeatureVector(np.array(values, dtype=np.int64), params.extractor_id, True, len(values))


def _tight_params():
    # positionwise vectors of length 4 keep these tests tiny
    return ExtractorParams(grid=2)


def _burst(params, manager, base, count, start_meta=0, jitter=0):
    """Insert near-identical vectors so they chain into one component."""
    for i in range(count):
        vals = list(base)
        vals[0] = base[0] + (i % 2) * jitter
        manager.store.insert(_vec(params, vals), NodeMeta(start_meta + i))


class TestDiskRecord:
    def test_roundtrip(self):
        rec = DiskRecord(
            node_id=77, epoch=3,
            hashes=np.array([5, 6, 7], dtype=np.int64),
            adjacency=((12, 0.75), (13, 0.5)), ts_ms=123456,
        )
        again = DiskRecord.decode(rec.encode()[4:])
        assert again.node_id == 77 and again.epoch == 3
        assert np.array_equal(again.hashes, rec.hashes)
        assert again.adjacency == rec.adjacency
        assert again.ts_ms == 123456

    def test_wire_format_is_little_endian_length_prefixed(self):
        rec = DiskRecord(node_id=1, epoch=0, hashes=np.array([9], dtype=np.int64),
                         adjacency=(), ts_ms=0)
        blob = rec.encode()
        body_len = int.from_bytes(blob[:4], "little")
        assert body_len == len(blob) - 4
        assert int.from_bytes(blob[4:12], "little") == 1  # node id u64


def _manager(tmp_path, params, top_k=3, watermark=10, init=None):
    cfg = GraphConfig(link_threshold=0.5, top_k=top_k, evict_watermark=watermark)
    mgr = StoreManager(params, cfg, tmp_path / "disk")
    init = init or [
        _vec(params, [1000 + 10 * i + j for j in range(4)]) for i in range(2)
    ]
    mgr.bootstrap(init)
    return mgr


class TestEviction:
    def test_fewer_than_k_components_is_noop(self, tmp_path):
        params = _tight_params()
        mgr = _manager(tmp_path, params, top_k=10)
        report = mgr.evict([], now_ms=0)
        assert report.skipped
        assert mgr.store.live_node_count == 2

    def test_lowest_pas_components_evicted(self, tmp_path):
        params = _tight_params()
        mgr = _manager(tmp_path, params, top_k=2)
        # three components with PAS 2.0, 1.0, 0.5 via controlled bursts
        for k, (pas_w, count) in enumerate(((1.0, 3), (0.5, 3), (0.25, 3))):
            base = [100 * (k + 1), 100 * (k + 1) + 1, 100 * (k + 1) + 2, 100 * (k + 1) + 3]
            for i in range(count):
                vals = list(base)
                if pas_w < 1.0 and i > 0:
                    vals[3] += i  # lower-weight links
                mgr.store.insert(_vec(params, vals), NodeMeta(k * 10 + i))
        before_nodes = mgr.store.live_node_count
        before_comps = mgr.store.live_component_count
        report = mgr.evict([], now_ms=5)
        assert report.evicted_components == before_comps - 2
        assert mgr.store.live_node_count == before_nodes - report.evicted_nodes
        # retention: survivors are exactly the top-K by PAS
        survivors = sorted(c.pas for c in mgr.store.components.values())
        assert len(survivors) == 2
        assert mgr.disk.record_count == report.evicted_nodes

    def test_flagged_components_never_evicted(self, tmp_path):
        params = _tight_params()
        mgr = _manager(tmp_path, params, top_k=1)
        _burst(params, mgr, [10, 11, 12, 13], 3)
        _burst(params, mgr, [20, 21, 22, 23], 3, start_meta=10)
        comp_ids = [c.cid for c in mgr.store.components.values() if c.size >= 2]
        weakest = min(comp_ids, key=lambda c: mgr.store.components[c].pas)
        mgr.evict([weakest], now_ms=0)
        assert weakest in mgr.store.components

    def test_conservation(self, tmp_path):
        params = _tight_params()
        mgr = _manager(tmp_path, params, top_k=1)
        inserted = 12
        rng = SeededRng(4, "cons")
        for i in range(inserted):
            vals = (rng.uniform(4) * 5000).astype(np.int64).tolist()
            mgr.store.insert(_vec(params, vals), NodeMeta(i))
        mgr.evict([], now_ms=0)
        total = mgr.store.live_node_count + mgr.disk.record_count
        assert total == inserted + 2  # insertions + init nodes

    def test_disk_failure_aborts_eviction(self, tmp_path, monkeypatch):
        params = _tight_params()
        mgr = _manager(tmp_path, params, top_k=1)
        _burst(params, mgr, [10, 11, 12, 13], 3)
        _burst(params, mgr, [20, 21, 22, 23], 3, start_meta=10)
        nodes_before = mgr.store.live_node_count
        comps_before = mgr.store.live_component_count

        def boom(records, feats):
            raise OSError("disk full")

        monkeypatch.setattr(mgr.disk, "append_batch", boom)
        report = mgr.evict([], now_ms=0)
        assert report.error is not None
        assert report.skipped
        assert mgr.store.live_node_count == nodes_before
        assert mgr.store.live_component_count == comps_before
        assert mgr.eviction_errors == 1

    def test_reconciliation_edges_link_to_prior_disk_nodes(self, tmp_path):
        params = _tight_params()
        mgr = _manager(tmp_path, params, top_k=1)
        # two successive eviction waves carrying near-identical features
        _burst(params, mgr, [10, 11, 12, 13], 2)
        _burst(params, mgr, [500, 501, 502, 503], 4)  # high-PAS keeper
        mgr.evict([], now_ms=1)
        first_wave = {r.node_id for r in mgr.disk.read_records()}
        assert first_wave
        _burst(params, mgr, [10, 11, 12, 99], 2, start_meta=40)
        _burst(params, mgr, [600, 601, 602, 603], 5, start_meta=50)
        mgr.evict([], now_ms=2)
        records = mgr.disk.read_records()
        second_wave = [r for r in records if r.node_id not in first_wave]
        cross = [
            (r.node_id, nid, w)
            for r in second_wave
            for nid, w in r.adjacency
            if nid in first_wave
        ]
        assert cross, "evicted nodes should reconcile to earlier disk nodes"
        for _, _, w in cross:
            assert w >= mgr.store.threshold

    def test_memory_footprint_counts(self, tmp_path, params, small_init_features):
        cfg = GraphConfig(link_threshold=0.5)
        mgr = StoreManager(params, cfg, tmp_path / "disk")
        mgr.bootstrap(small_init_features)
        fp = mgr.memory_footprint()
        assert fp.in_memory_nodes == len(small_init_features)
        assert fp.in_memory_features == fp.in_memory_nodes
        assert fp.in_memory_edges == 0
        assert fp.disk_records == 0


class TestReset:
    def test_reset_replays_init_and_clears(self, tmp_path):
        params = _tight_params()
        init = [_vec(params, [9000 + 10 * i + j for j in range(4)]) for i in range(5)]
        mgr = _manager(tmp_path, params, init=init)
        t_before = mgr.epoch_state.threshold
        _burst(params, mgr, [10, 11, 12, 13], 4)
        mgr.evict([], now_ms=0)
        state = mgr.reset(now_ms=99)
        assert state.epoch == 1
        assert mgr.store.live_node_count == 5
        assert mgr.store.live_edge_count == 0
        assert mgr.disk.record_count == 0
        assert mgr.disk.read_records() == []
        # T recomputation is bit-for-bit reproducible
        assert state.threshold == t_before

    def test_disk_purged_on_reset(self, tmp_path):
        params = _tight_params()
        mgr = _manager(tmp_path, params, top_k=1)
        _burst(params, mgr, [10, 11, 12, 13], 3)
        _burst(params, mgr, [20, 21, 22, 23], 3, start_meta=10)
        mgr.evict([], now_ms=0)
        assert mgr.disk.record_count > 0
        mgr.reset()
        logs = list((tmp_path / "disk").glob("records.epoch0000*"))
        assert logs == []
