"""Two-phase anomaly detection over provenance components.

Phase one runs an iterated max-outlier test (Grubbs) over component
anomaly scores to shortlist suspects cheaply. Phase two confirms each
shortlisted component with a graph classifier applied to its line graph,
so only components that also look structurally like attack sequences are
flagged. Flags are monotone until the store resets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, TrainingError
from .graph import Component, ProvenanceStore
from .numerics import (
    GcnWeights,
    SeededRng,
    gcn_backward,
    gcn_forward,
    gcn_init_weights,
    normalized_adjacency,
    t_upper_critical,
)

REASON_INIT = "init"
REASON_ISOLATED = "isolated"
REASON_BENIGN_COMPONENT = "benign-component"
REASON_STATS = "stats-flagged"
REASON_CLASSIFIER = "classifier-confirmed"

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.01
    classifier_threshold: float = 0.5
    include_singletons: bool = True
    use_classifier: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ContractError("alpha must be in (0, 0.5)")


# ---------------------------------------------------------------------------
# Statistics phase
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrubbsResult:
    g_test: float
    g_critical: float
    outlier_index: int | None
    mean: float
    std: float


def grubbs_critical(n: int, alpha: float) -> float:
    """Critical value for the one-sided max test at significance alpha."""
    t = t_upper_critical(alpha / n, n - 2)
    return ((n - 1) / math.sqrt(n)) * math.sqrt(t * t / (n - 2 + t * t))


def grubbs_step(values: np.ndarray, alpha: float) -> GrubbsResult:
    """One-sided Grubbs test for the sample maximum.

    The null hypothesis (no outlier) is rejected when the test statistic
    exceeds the critical value; a zero-variance sample never rejects.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n < 3:
        raise ContractError(f"Grubbs test needs at least 3 values, got {n}")
    mean = float(values.mean())
    std = float(values.std(ddof=1))
    g_critical = grubbs_critical(n, alpha)
    if std == 0.0:
        return GrubbsResult(0.0, g_critical, None, mean, std)
    idx = int(np.argmax(values))
    g_test = (float(values[idx]) - mean) / std
    outlier = idx if g_test > g_critical else None
    return GrubbsResult(g_test, g_critical, outlier, mean, std)


def iterate_grubbs(
    ids: np.ndarray, values: np.ndarray, alpha: float
) -> list[int]:
    """Repeated single-outlier removal until no outlier or fewer than 3
    samples remain; returns removed ids in detection order.

    Equivalent to re-running grubbs_step after each removal; implemented
    with sum/sum-of-squares downdating so a pass over a large population
    costs one argmax per removed outlier.
    """
    vals = np.asarray(values, dtype=np.float64).copy()
    idents = np.asarray(ids, dtype=np.int64)
    removed: list[int] = []
    n = vals.shape[0]
    total = float(vals.sum())
    total_sq = float((vals * vals).sum())
    while n >= 3:
        mean = total / n
        var = (total_sq - n * mean * mean) / (n - 1)
        if var <= 0.0:
            break
        std = math.sqrt(var)
        idx = int(np.argmax(vals))
        top = float(vals[idx])
        g_test = (top - mean) / std
        if g_test <= grubbs_critical(n, alpha):
            break
        removed.append(int(idents[idx]))
        vals[idx] = -np.inf
        total -= top
        total_sq -= top * top
        n -= 1
    return removed


# ---------------------------------------------------------------------------
# Line graph + classifier phase
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineGraph:
    """Line-graph view of a component: one node per original edge."""

    features: np.ndarray  # (m, 1) edge weights
    adjacency: np.ndarray  # (m, m) 0/1, symmetric

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2


def line_graph(component: Component) -> LineGraph:
    """Nodes are the component's edges (feature = weight); two nodes are
    adjacent when the original edges share an endpoint."""
    m = len(component.edges)
    if m == 0:
        raise ContractError("cannot build a line graph from an edgeless component")
    feats = np.empty((m, 1), dtype=np.float64)
    incident: dict[int, list[int]] = {}
    for i, e in enumerate(component.edges):
        feats[i, 0] = e.weight
        incident.setdefault(e.a, []).append(i)
        incident.setdefault(e.b, []).append(i)
    adj = np.zeros((m, m), dtype=np.float64)
    for edge_ids in incident.values():
        k = len(edge_ids)
        for i in range(k):
            for j in range(i + 1, k):
                a, b = edge_ids[i], edge_ids[j]
                adj[a, b] = 1.0
                adj[b, a] = 1.0
    return LineGraph(features=feats, adjacency=adj)


class GcnModel:
    """3-conv + 1-linear graph classifier over line graphs."""

    def __init__(self, weights: GcnWeights):
        self.weights = weights

    def classify(self, lg: LineGraph) -> float:
        """Anomaly-class probability for one line graph."""
        if lg.n_nodes == 0:
            raise ContractError("empty line graph")
        probs, _ = gcn_forward(self.weights, normalized_adjacency(lg.adjacency), lg.features)
        return float(probs[1])

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        layers = {}
        for name, mat in zip(
            ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"), self.weights.as_list()
        ):
            arr = np.atleast_2d(mat)
            layers[name] = {
                "rows": int(arr.shape[0]),
                "cols": int(arr.shape[1]),
                "data": [float(v) for v in arr.ravel()],
            }
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "hidden": self.weights.hidden,
            "layers": layers,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "GcnModel":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ContractError(f"unsupported model format: {doc.get('format_version')}")
        mats = []
        for name in ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"):
            spec = doc["layers"][name]
            arr = np.array(spec["data"], dtype=np.float64).reshape(spec["rows"], spec["cols"])
            if name.startswith("b"):
                arr = arr.ravel()
            mats.append(arr)
        return cls(GcnWeights(*mats, hidden=int(doc["hidden"])))

    @classmethod
    def zeros(cls, hidden: int = 32) -> "GcnModel":
        return cls(
            GcnWeights(
                w1=np.zeros((1, hidden)),
                b1=np.zeros(hidden),
                w2=np.zeros((hidden, hidden)),
                b2=np.zeros(hidden),
                w3=np.zeros((hidden, hidden)),
                b3=np.zeros(hidden),
                w4=np.zeros((hidden, 2)),
                b4=np.zeros(2),
                hidden=hidden,
            )
        )


# ---------------------------------------------------------------------------
# Anomaly set + detection pass
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlagRecord:
    component_id: int
    flagged_at: int  # stream position (query count) when flagged
    score: float | None
    reason: str


class AnomalySet:
    """Components currently considered malicious; flags persist until reset."""

    def __init__(self):
        self._flags: dict[int, FlagRecord] = {}

    def __contains__(self, cid: int) -> bool:
        return cid in self._flags

    def __len__(self) -> int:
        return len(self._flags)

    def record(self, cid: int) -> FlagRecord:
        return self._flags[cid]

    def add(self, record: FlagRecord) -> None:
        self._flags.setdefault(record.component_id, record)

    def component_ids(self) -> list[int]:
        return sorted(self._flags)

    def clear(self) -> None:
        self._flags.clear()


@dataclass(frozen=True)
class Verdict:
    query_id: int
    decision: str  # "accept" | "reject"
    component_id: int
    component_pas: float
    classifier_score: float | None
    reason: str


class Detector:
    """Runs the two-phase pass and issues per-query verdicts."""

    def __init__(self, cfg: DetectorConfig, model: GcnModel | None, min_graph_size: int):
        if cfg.use_classifier and model is None:
            raise ContractError("detector configured to use a classifier but none loaded")
        self.cfg = cfg
        self.model = model
        self.min_graph_size = min_graph_size
        self.anomalies = AnomalySet()
        self._score_cache: dict[int, tuple[int, float]] = {}  # cid -> (size, score)

    def reset(self) -> None:
        self.anomalies.clear()
        self._score_cache.clear()

    def detect(self, store: ProvenanceStore, stream_position: int) -> list[FlagRecord]:
        """One detection pass over the current component population.

        Singleton components enter the sample as zero-score stand-ins (when
        configured) so the population reflects the full history; shortlisted
        components smaller than the minimum graph size stay pending and are
        re-examined as they grow.
        """
        multi = store.multi_components
        ids = np.fromiter(multi.keys(), dtype=np.int64, count=len(multi))
        vals = np.fromiter((c.pas for c in multi.values()), dtype=np.float64, count=len(multi))
        if self.cfg.include_singletons:
            n_singletons = store.live_component_count - len(multi)
            if n_singletons > 0:
                ids = np.concatenate([ids, np.full(n_singletons, -1, dtype=np.int64)])
                vals = np.concatenate([vals, np.zeros(n_singletons)])
        if vals.shape[0] < 3:
            return []
        shortlist = iterate_grubbs(ids, vals, self.cfg.alpha)
        newly: list[FlagRecord] = []
        for cid in shortlist:
            if cid < 0 or cid in self.anomalies:
                continue
            comp = store.components.get(cid)
            if comp is None or comp.size < self.min_graph_size:
                continue  # pending: re-checked when it grows
            if self.cfg.use_classifier:
                score = self._classify_cached(comp)
                if score > self.cfg.classifier_threshold:
                    rec = FlagRecord(cid, stream_position, score, REASON_CLASSIFIER)
                else:
                    continue
            else:
                rec = FlagRecord(cid, stream_position, None, REASON_STATS)
            self.anomalies.add(rec)
            newly.append(rec)
        return newly

    def _classify_cached(self, comp: Component) -> float:
        cached = self._score_cache.get(comp.cid)
        if cached is not None and cached[0] == comp.size:
            return cached[1]
        score = self.model.classify(line_graph(comp))
        self._score_cache[comp.cid] = (comp.size, score)
        return score

    def verdict_for(self, query_id: int, insert_result, store: ProvenanceStore) -> Verdict:
        """Reject iff the query's component is flagged; otherwise accept."""
        cid = insert_result.component_id
        comp = store.components.get(cid)
        pas = comp.pas if comp is not None else insert_result.component_pas
        if cid in self.anomalies:
            rec = self.anomalies.record(cid)
            return Verdict(query_id, "reject", cid, pas, rec.score, rec.reason)
        if store.node_meta(insert_result.node_id).is_init:
            reason = REASON_INIT
        elif store.node_degree(insert_result.node_id) == 0:
            reason = REASON_ISOLATED
        else:
            reason = REASON_BENIGN_COMPONENT
        return Verdict(query_id, "accept", cid, pas, None, reason)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

LABEL_BENIGN = 0
LABEL_ANOMALY = 1


@dataclass
class TrainReport:
    epochs: int
    best_epoch: int
    train_accuracy: float
    test_accuracy: float
    test_accuracy_benign: float
    test_accuracy_anomaly: float
    final_train_loss: float
    train_size: int
    test_size: int


def train_classifier(
    corpus: list[tuple[LineGraph, int]],
    seed: int = 0,
    hidden: int = 32,
    epochs: int = 250,
    learning_rate: float = 0.5,
    test_fraction: float = 0.3,
) -> tuple[GcnModel, TrainReport]:
    """Full-batch gradient descent on cross-entropy over line graphs.

    The corpus is shuffled deterministically, split 7:3, and the
    checkpoint with the best test accuracy is returned.
    """
    labels = {label for _, label in corpus}
    if labels != {LABEL_BENIGN, LABEL_ANOMALY}:
        raise TrainingError(f"corpus must contain both classes, got labels {sorted(labels)}")
    rng = SeededRng(seed, "train-classifier")
    order = rng.permutation(len(corpus))
    shuffled = [corpus[i] for i in order]
    n_test = max(1, int(round(test_fraction * len(shuffled))))
    test_set = shuffled[:n_test]
    train_set = shuffled[n_test:]
    if not train_set:
        raise TrainingError("corpus too small to split")
    if {label for _, label in train_set} != {LABEL_BENIGN, LABEL_ANOMALY}:
        raise TrainingError("train split lost a class; provide a larger corpus")

    prepared_train = [
        (normalized_adjacency(lg.adjacency), lg.features, label) for lg, label in train_set
    ]
    prepared_test = [
        (normalized_adjacency(lg.adjacency), lg.features, label) for lg, label in test_set
    ]

    weights = gcn_init_weights(rng.split("weights"), hidden=hidden, in_dim=1)
    best = weights.copy()
    best_acc = -1.0
    best_epoch = 0
    last_loss = math.inf
    for epoch in range(epochs):
        grads = [np.zeros_like(m) for m in weights.as_list()]
        loss = 0.0
        for adj_n, feats, label in prepared_train:
            probs, cache = gcn_forward(weights, adj_n, feats)
            loss -= math.log(max(probs[label], 1e-300))
            g = gcn_backward(weights, adj_n, cache, label)
            for acc, part in zip(grads, g.as_list()):
                acc += part
        scale = learning_rate / len(prepared_train)
        for mat, grad in zip(weights.as_list(), grads):
            mat -= scale * grad
        last_loss = loss / len(prepared_train)
        acc_test = _accuracy(weights, prepared_test)
        if acc_test > best_acc:
            best_acc = acc_test
            best = weights.copy()
            best_epoch = epoch
    model = GcnModel(best)
    report = TrainReport(
        epochs=epochs,
        best_epoch=best_epoch,
        train_accuracy=_accuracy(best, prepared_train),
        test_accuracy=best_acc,
        test_accuracy_benign=_accuracy(best, [p for p in prepared_test if p[2] == LABEL_BENIGN]),
        test_accuracy_anomaly=_accuracy(best, [p for p in prepared_test if p[2] == LABEL_ANOMALY]),
        final_train_loss=last_loss,
        train_size=len(train_set),
        test_size=len(test_set),
    )
    return model, report


def _accuracy(weights: GcnWeights, prepared: list) -> float:
    if not prepared:
        return 0.0
    correct = 0
    for adj_n, feats, label in prepared:
        probs, _ = gcn_forward(weights, adj_n, feats)
        correct += int(np.argmax(probs)) == label
    return correct / len(prepared)
