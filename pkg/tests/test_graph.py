import numpy as np
import pytest

from qpa.errors import ContractError, InitError
from qpa.features import ExtractorParams, FeatureVector, ImagePayload, extract
from qpa.graph import GraphConfig, NodeMeta, ProvenanceStore, recompute_pas
from qpa.harness import record_attack_run
from qpa.numerics import SeededRng
from qpa.sim.benign import BenignFamily

SET10 = ExtractorParams(kind="blacklight", set_length=10)


def _setvec(values):
    return FeatureVector(
        hashes=np.array(sorted(values), dtype=np.int64),
        extractor_id=SET10.extractor_id,
        positionwise=False,
        length=10,
    )


def _posvec(values, params):
    return FeatureVector(
        hashes=np.array(values, dtype=np.int64),
        extractor_id=params.extractor_id,
        positionwise=True,
        length=len(values),
    )


def _fresh_store(threshold=0.5, params=SET10, **cfg_kw):
    cfg = GraphConfig(link_threshold=threshold, **cfg_kw)
    return ProvenanceStore(params, cfg), cfg


class TestInitialize:
    def test_needs_two_features(self):
        with pytest.raises(InitError):
            ProvenanceStore.initialize([_setvec(range(10))], GraphConfig(), SET10)

    def test_two_identical_features_give_threshold_one(self):
        fv = _setvec(range(10))
        store, t = ProvenanceStore.initialize([fv, fv], GraphConfig(), SET10)
        assert t == 1.0
        # future edge forms only at similarity exactly 1
        r = store.insert(_setvec(range(1, 11)), NodeMeta(0))
        assert r.edge is None
        r = store.insert(fv, NodeMeta(1))
        assert r.edge is not None and r.edge.weight == 1.0

    def test_orthogonal_features_give_threshold_zero(self):
        feats = [_setvec(range(10 * i, 10 * i + 10)) for i in range(5)]
        store, t = ProvenanceStore.initialize(feats, GraphConfig(), SET10)
        assert t == 0.0
        # every insertion now links to its nearest neighbor
        r = store.insert(_setvec(range(1000, 1010)), NodeMeta(0))
        assert r.edge is not None

    def test_percentile_on_synthetic_family(self, params, small_init_features):
        store, t = ProvenanceStore.initialize(small_init_features, GraphConfig(), params)
        assert 0.0 < t < 1.0
        assert store.live_node_count == len(small_init_features)
        assert store.live_component_count == len(small_init_features)


class TestInsert:
    def test_uninitialized_store_rejects_insert(self):
        store = ProvenanceStore(SET10, GraphConfig())
        with pytest.raises(ContractError):
            store.insert(_setvec(range(10)), NodeMeta(0))

    def test_insert_into_empty_store_is_isolated(self):
        store, _ = _fresh_store(threshold=0.5)
        r = store.insert(_setvec(range(10)), NodeMeta(0))
        assert r.edge is None
        assert r.component_size == 1
        assert r.component_pas == 0.0

    def test_three_node_pas_accumulation(self):
        store, _ = _fresh_store(threshold=0.5)
        q1 = _setvec(range(10))
        store.insert(q1, NodeMeta(1))
        # q2 shares 9 of 10 values with q1 -> weight 0.9
        q2 = _setvec(list(range(9)) + [100])
        r2 = store.insert(q2, NodeMeta(2))
        assert r2.edge is not None and r2.edge.weight == pytest.approx(0.9)
        assert r2.component_pas == pytest.approx(0.9)
        # q3 shares 8 with both q1 and q2 (tie -> most recent) -> weight 0.8
        q3 = _setvec(list(range(8)) + [200, 201])
        r3 = store.insert(q3, NodeMeta(3))
        assert r3.edge is not None and r3.edge.weight == pytest.approx(0.8)
        assert r3.component_pas == pytest.approx(1.7)
        assert r3.component_size == 3

    def test_tie_breaks_to_most_recent(self):
        store, _ = _fresh_store(threshold=0.5)
        twin = _setvec(range(10))
        r_old = store.insert(twin, NodeMeta(1))
        r_new = store.insert(_setvec(list(range(5)) + [50, 51, 52, 53, 54]), NodeMeta(2))
        # query equally similar to both twins must link to the newer node
        probe = _setvec(list(range(5)) + [70, 71, 72, 73, 74])
        r = store.insert(probe, NodeMeta(3))
        assert r.edge is not None
        assert r.edge.b == r_new.node_id

    def test_one_edge_rule(self, params, small_init_features):
        store, _ = ProvenanceStore.initialize(small_init_features, GraphConfig(), params)
        family = BenignFamily(7)
        rng = SeededRng(5, "stream")
        inserted = 0
        for i in range(150):
            fv = extract(ImagePayload.from_array(family.image(rng)), params)
            store.insert(fv, NodeMeta(i))
            inserted += 1
        assert store.live_edge_count <= inserted

    def test_components_partition_nodes(self, params, small_init_features):
        store, _ = ProvenanceStore.initialize(small_init_features, GraphConfig(), params)
        family = BenignFamily(7)
        rng = SeededRng(6, "stream")
        for i in range(100):
            fv = extract(ImagePayload.from_array(family.image(rng)), params)
            store.insert(fv, NodeMeta(i))
        seen = []
        for comp in store.components.values():
            seen.extend(comp.nodes)
        assert len(seen) == store.live_node_count
        assert len(set(seen)) == len(seen)


class TestPasCoherence:
    def test_snapshot_matches_recomputation(self, params, small_init_features):
        store, _ = ProvenanceStore.initialize(small_init_features, GraphConfig(), params)
        family = BenignFamily(7)
        rng = SeededRng(7, "stream")
        for i in range(200):
            fv = extract(ImagePayload.from_array(family.image(rng)), params)
            r = store.insert(fv, NodeMeta(i))
            comp = store.components[r.component_id]
            assert abs(comp.pas - recompute_pas(comp)) < 1e-9
        for cid, pas, size in store.component_pas_snapshot():
            comp = store.components[cid]
            assert abs(pas - recompute_pas(comp)) < 1e-9
            assert size == comp.size
            if size == 1:
                assert pas == 0.0

    def test_recompute_examples(self):
        from qpa.graph import Component, Edge

        singleton = Component(cid=0, nodes=[0])
        assert recompute_pas(singleton) == 0.0
        path = Component(
            cid=0, nodes=[0, 1, 2],
            edges=[Edge(1, 0, 0.6), Edge(2, 1, 0.7)], pas=1.3,
        )
        assert recompute_pas(path) == pytest.approx(1.3)


class TestThresholdMonotonicity:
    def test_raising_threshold_never_grows_components(self, params):
        family = BenignFamily(7)
        rng = SeededRng(8, "stream")
        feats = [
            extract(ImagePayload.from_array(family.image(rng)), params) for _ in range(250)
        ]
        sizes = {}
        for t in (0.05, 0.1, 0.3):
            store, _ = _fresh_store(threshold=t, params=params)
            for i, fv in enumerate(feats):
                store.insert(fv, NodeMeta(i))
            sizes[t] = sorted((c.size for c in store.components.values()), reverse=True)
        for lo, hi in ((0.05, 0.1), (0.1, 0.3)):
            for a, b in zip(sizes[hi], sizes[lo]):
                assert a <= b


def test_attack_burst_dominates_benign_pas(params, small_init_features, graph_cfg):
    # 200 gradient-estimation queries around one attack point form one
    # dominant component whose PAS dwarfs every benign component
    store, _ = ProvenanceStore.initialize(small_init_features, graph_cfg, params)
    out = record_attack_run("hsja", seed=1234, run_id=0, query_cap=200)
    touched = set()
    for rec in out.records:
        fv = extract(rec.image, params)
        r = store.insert(fv, NodeMeta(rec.query_id))
        touched.add(r.component_id)
    comps = [store.components[c] for c in touched if c in store.components]
    attack_main = max(comps, key=lambda c: c.pas)
    benign_pas = [
        c.pas for c in store.components.values() if c.cid not in touched and c.size >= 2
    ]
    assert attack_main.size >= 50
    if benign_pas:
        assert attack_main.pas >= 10.0 * max(benign_pas)
