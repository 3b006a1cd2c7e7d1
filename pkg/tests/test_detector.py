import math

import numpy as np
import pytest
from scipy import stats

from qpa.detector import (
    LABEL_ANOMALY,
    LABEL_BENIGN,
    AnomalySet,
    Detector,
    DetectorConfig,
    FlagRecord,
    GcnModel,
    LineGraph,
    grubbs_critical,
    grubbs_step,
    iterate_grubbs,
    line_graph,
    train_classifier,
)
from qpa.errors import ContractError, TrainingError
from qpa.graph import Component, Edge
from qpa.numerics import SeededRng, normalized_adjacency, gcn_forward


def oracle_grubbs_outlier(values, alpha):
    """Independent check of the one-sided max test via scipy's t quantile."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    mean = values.mean()
    std = values.std(ddof=1)
    if std == 0:
        return None
    t = stats.t.ppf(1.0 - alpha / n, n - 2)
    g_crit = (n - 1) / math.sqrt(n) * math.sqrt(t * t / (n - 2 + t * t))
    g_test = (values.max() - mean) / std
    return int(np.argmax(values)) if g_test > g_crit else None


class TestGrubbs:
    def test_requires_three_values(self):
        with pytest.raises(ContractError):
            grubbs_step(np.array([1.0, 2.0]), 0.01)

    def test_degenerate_zero_variance(self):
        res = grubbs_step(np.zeros(10), 0.01)
        assert res.outlier_index is None
        assert res.std == 0.0

    def test_single_extreme_detected(self):
        vals = np.array([1.0 + 0.01 * i for i in range(19)] + [50.0])
        res = grubbs_step(vals, 0.01)
        assert res.outlier_index == 19
        assert oracle_grubbs_outlier(vals, 0.01) == 19

    def test_critical_values_match_published_tables(self):
        # one-sided Grubbs critical values
        assert grubbs_critical(10, 0.05) == pytest.approx(2.176, abs=1e-3)
        assert grubbs_critical(20, 0.01) == pytest.approx(2.884, abs=1e-3)

    def test_agrees_with_oracle_on_random_samples(self):
        rng = SeededRng(17, "grubbs")
        for trial in range(200):
            n = 3 + rng.integers(48)
            vals = np.abs(rng.normal(n))
            if rng.uniform() < 0.4:
                vals[rng.integers(n)] *= 30.0
            alpha = 0.01 if trial % 2 else 0.05
            res = grubbs_step(vals, alpha)
            assert res.outlier_index == oracle_grubbs_outlier(vals, alpha)


class TestIterateGrubbs:
    def test_all_equal_yields_empty(self):
        assert iterate_grubbs(np.arange(10), np.ones(10), 0.01) == []

    def test_two_extremes_among_benign(self):
        rng = SeededRng(18, "it")
        vals = np.concatenate([0.1 + 0.01 * rng.uniform(50), [40.0, 70.0]])
        ids = np.arange(52)
        got = iterate_grubbs(ids, vals, 0.01)
        assert got[:2] == [51, 50]  # descending PAS order

    def test_fixed_point_of_sequential_removal(self):
        rng = SeededRng(19, "it")
        for trial in range(100):
            n = 3 + rng.integers(28)
            vals = np.abs(rng.normal(n)) * (1 + 3 * rng.uniform())
            ids = np.arange(n)
            got = iterate_grubbs(ids, vals, 0.05)
            # brute force: re-evaluate the full test after every removal
            v = vals.copy()
            live = list(range(n))
            ref = []
            while len(v) >= 3:
                idx = oracle_grubbs_outlier(v, 0.05)
                if idx is None:
                    break
                ref.append(live[idx])
                keep = np.ones(len(v), bool)
                keep[idx] = False
                v = v[keep]
                live = [live[i] for i in range(len(live)) if keep[i]]
            assert got == ref

    def test_removal_soundness(self):
        # a removed value always exceeds the post-removal sample mean
        rng = SeededRng(20, "it")
        vals = np.concatenate([rng.uniform(30), [5.0, 9.0]])
        ids = np.arange(32)
        removed = iterate_grubbs(ids, vals, 0.01)
        for rid in removed:
            rest = np.delete(vals, rid)
            assert vals[rid] > rest.mean()


def _component(weights, star=False):
    """A path (or star) component with the given edge weights."""
    edges = []
    if star:
        for i, w in enumerate(weights):
            edges.append(Edge(a=i + 1, b=0, weight=w))
        nodes = list(range(len(weights) + 1))
    else:
        for i, w in enumerate(weights):
            edges.append(Edge(a=i + 1, b=i, weight=w))
        nodes = list(range(len(weights) + 1))
    return Component(cid=0, nodes=nodes, edges=edges, pas=float(sum(weights)))


class TestLineGraph:
    def test_edgeless_component_rejected(self):
        with pytest.raises(ContractError):
            line_graph(Component(cid=0, nodes=[0]))

    def test_path_two_edges(self):
        lg = line_graph(_component([0.5, 0.7]))
        assert lg.n_nodes == 2
        assert lg.n_edges == 1

    def test_star_four_leaves(self):
        lg = line_graph(_component([0.5, 0.6, 0.7, 0.8], star=True))
        assert lg.n_nodes == 4
        assert lg.n_edges == 6  # C(4,2)

    def test_counting_law_on_random_graphs(self):
        rng = SeededRng(21, "lg")
        for trial in range(100):
            n = 2 + rng.integers(11)
            # random tree plus the feature weights (components here are trees)
            edges = []
            for i in range(1, n):
                parent = rng.integers(i)
                edges.append(Edge(a=i, b=parent, weight=float(rng.uniform())))
            comp = Component(cid=0, nodes=list(range(n)), edges=edges,
                             pas=sum(e.weight for e in edges))
            lg = line_graph(comp)
            assert lg.n_nodes == len(edges)
            deg = {}
            for e in edges:
                deg[e.a] = deg.get(e.a, 0) + 1
                deg[e.b] = deg.get(e.b, 0) + 1
            expected_edges = sum(d * (d - 1) // 2 for d in deg.values())
            assert lg.n_edges == expected_edges


class TestClassifier:
    def test_zero_model_scores_half(self):
        model = GcnModel.zeros()
        assert model.classify(line_graph(_component([0.5, 0.7]))) == pytest.approx(0.5)

    def test_permutation_invariance(self, trained_model):
        rng = SeededRng(22, "perm")
        comp = _component([float(0.3 + 0.6 * rng.uniform()) for _ in range(12)], star=True)
        lg = line_graph(comp)
        base = trained_model.classify(lg)
        perm = rng.permutation(lg.n_nodes)
        lg2 = LineGraph(
            features=lg.features[perm],
            adjacency=lg.adjacency[np.ix_(perm, perm)],
        )
        assert abs(trained_model.classify(lg2) - base) < 1e-6

    def test_trained_model_accuracy(self, trained_model):
        assert trained_model.report.test_accuracy >= 0.95

    def test_model_roundtrip(self, trained_model, tmp_path):
        path = tmp_path / "m.json"
        trained_model.save(path)
        again = GcnModel.load(path)
        lg = line_graph(_component([0.9] * 20, star=True))
        assert again.classify(lg) == trained_model.classify(lg)
        # deterministic bytes
        path2 = tmp_path / "m2.json"
        again.save(path2)
        assert path.read_bytes() == path2.read_bytes()


def _toy_corpus(n=40):
    """Linearly separable: attack = heavy chains, benign = single light edges."""
    rng = SeededRng(23, "toy")
    corpus = []
    for i in range(n):
        w = 0.85 + 0.1 * rng.uniform()
        corpus.append((line_graph(_component([w] * (6 + i % 5))), LABEL_ANOMALY))
        corpus.append((line_graph(_component([0.25 + 0.1 * rng.uniform()])), LABEL_BENIGN))
    return corpus


class TestTraining:
    def test_separable_corpus_reaches_full_train_accuracy(self):
        model, report = train_classifier(_toy_corpus(), seed=1, epochs=150, learning_rate=1.0)
        assert report.train_accuracy == 1.0
        assert report.test_accuracy == 1.0

    def test_loss_decreases_after_first_step(self):
        corpus = _toy_corpus(10)
        _, r1 = train_classifier(corpus, seed=2, epochs=1, learning_rate=0.5)
        _, r2 = train_classifier(corpus, seed=2, epochs=2, learning_rate=0.5)
        assert r2.final_train_loss < r1.final_train_loss

    def test_missing_class_rejected(self):
        bad = [(line_graph(_component([0.9, 0.9])), LABEL_ANOMALY)] * 6
        with pytest.raises(TrainingError):
            train_classifier(bad, seed=3)


class TestDetectAndVerdicts:
    def test_gating_and_monotone_flags(self, params, small_init_features, graph_cfg, trained_model):
        from qpa.features import FeatureVector
        from qpa.graph import NodeMeta, ProvenanceStore

        store, _ = ProvenanceStore.initialize(small_init_features, graph_cfg, params)
        det = Detector(DetectorConfig(), trained_model, graph_cfg.min_graph_size)

        # synthetic high-weight burst: near-identical positionwise vectors
        base = np.arange(64, dtype=np.int64) * 7
        first = None
        flagged_at = None
        for i in range(30):
            h = base.copy()
            h[i % 3] = 1000 + i % 2  # tiny variation, similarity stays ~0.95+
            fv = FeatureVector(h, params.extractor_id, True, 64)
            r = store.insert(fv, NodeMeta(i))
            if first is None:
                first = r.component_id
            newly = det.detect(store, i)
            comp = store.components[r.component_id]
            if comp.size < graph_cfg.min_graph_size:
                # gating: huge PAS but too small -> never flagged yet
                assert r.component_id not in det.anomalies
            if newly and flagged_at is None:
                flagged_at = i
            verdict = det.verdict_for(i, r, store)
            if r.component_id in det.anomalies:
                assert verdict.decision == "reject"
                assert verdict.reason == "classifier-confirmed"
        assert flagged_at is not None and flagged_at + 1 >= graph_cfg.min_graph_size

    def test_isolated_and_init_reasons(self, params, small_init_features, graph_cfg, trained_model):
        from qpa.features import FeatureVector
        from qpa.graph import NodeMeta, ProvenanceStore

        store, _ = ProvenanceStore.initialize(small_init_features, graph_cfg, params)
        det = Detector(DetectorConfig(), trained_model, graph_cfg.min_graph_size)
        fv = FeatureVector(np.arange(64, dtype=np.int64) + 900_000,
                           params.extractor_id, True, 64)
        r = store.insert(fv, NodeMeta(0))
        v = det.verdict_for(0, r, store)
        assert v.decision == "accept" and v.reason == "isolated"

    def test_stats_only_mode_flags_without_classifier(self, params, small_init_features, graph_cfg):
        from qpa.features import FeatureVector
        from qpa.graph import NodeMeta, ProvenanceStore

        store, _ = ProvenanceStore.initialize(small_init_features, graph_cfg, params)
        det = Detector(DetectorConfig(use_classifier=False), None, graph_cfg.min_graph_size)
        base = np.arange(64, dtype=np.int64)
        for i in range(20):
            h = base.copy()
            h[0] = 1000 + i % 2
            fv = FeatureVector(h, params.extractor_id, True, 64)
            r = store.insert(fv, NodeMeta(i))
            det.detect(store, i)
        assert len(det.anomalies) >= 1
        rec = det.anomalies.record(det.anomalies.component_ids()[0])
        assert rec.reason == "stats-flagged"
        assert rec.score is None
