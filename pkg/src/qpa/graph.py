"""Incrementally constructed query provenance graph.

Every query becomes a node; a node gets at most one edge, to its most
similar in-memory predecessor, and only when that similarity clears the
epoch threshold T. Connected components carry a cached anomaly score
(the sum of their edge weights) maintained incrementally.

Single logical writer; readers take immutable snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, InitError
from .features import ExtractorParams, FeatureVector

T_PERCENTILE = 90.0


@dataclass(frozen=True)
class GraphConfig:
    link_threshold: float | None = None  # None: computed at initialization
    init_count: int = 1000
    top_k: int = 20
    min_graph_size: int = 15
    evict_watermark: int = 5000
    reset_every_queries: int = 50_000
    reset_period_hours: float = 24.0

    def __post_init__(self):
        if self.link_threshold is not None and not 0.0 < self.link_threshold < 1.0:
            raise ContractError("link threshold must be inside (0, 1)")
        if self.top_k < 1:
            raise ContractError("top_k must be >= 1")
        if self.min_graph_size < 2:
            raise ContractError("min_graph_size must be >= 2")


@dataclass(frozen=True)
class NodeMeta:
    query_id: int
    ts_ms: int = 0
    is_init: bool = False


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    weight: float


@dataclass
class Component:
    cid: int  # node id of the component's first member; stable for its lifetime
    nodes: list[int] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    pas: float = 0.0

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class InsertResult:
    node_id: int
    edge: Edge | None
    component_id: int
    component_pas: float
    component_size: int


def recompute_pas(component: Component) -> float:
    """Exact PAS from the edge list; oracle for the incremental cache."""
    total = 0.0
    for e in component.edges:
        total += e.weight
    return total


class ProvenanceStore:
    """In-memory provenance graph over hash feature vectors."""

    def __init__(self, params: ExtractorParams, cfg: GraphConfig):
        self.params = params
        self.cfg = cfg
        self.threshold: float | None = cfg.link_threshold
        self.next_node_id = 0
        self.insertion_count = 0  # non-init insertions this epoch
        self._L = params.length
        cap = max(2 * cfg.init_count, 4096)
        self._feat = np.zeros((cap, self._L), dtype=np.int64)
        self._len = np.zeros(cap, dtype=np.int32)
        self._slot_node = np.zeros(cap, dtype=np.int64)
        self._n_live = 0
        self._node_slot: dict[int, int] = {}
        self._node_component: dict[int, int] = {}
        self._node_degree: dict[int, int] = {}
        self._node_meta: dict[int, NodeMeta] = {}
        self.components: dict[int, Component] = {}
        self.multi_components: dict[int, Component] = {}  # size >= 2 only

    # -- construction ------------------------------------------------------

    @classmethod
    def initialize(
        cls,
        benign_features: list[FeatureVector],
        cfg: GraphConfig,
        params: ExtractorParams,
    ) -> tuple["ProvenanceStore", float]:
        """Seed the graph with isolated benign nodes and derive T.

        T is the 90th percentile of each init feature's similarity to its
        nearest neighbor among the rest, unless pinned in the config.
        """
        if len(benign_features) < 2:
            raise InitError("graph initialization needs at least 2 benign features")
        store = cls(params, cfg)
        for fv in benign_features:
            store._check_feature(fv)
            store._add_node(fv, NodeMeta(query_id=-1, is_init=True))
        if cfg.link_threshold is not None:
            store.threshold = cfg.link_threshold
        else:
            store.threshold = store._nn_percentile_threshold()
        return store, store.threshold

    def _nn_percentile_threshold(self) -> float:
        n = self._n_live
        feats = self._feat[:n]
        if self.params.kind == "piha":
            maxima = kernels.pairwise_nn_positionwise(feats) / float(self._L)
        else:
            maxima = kernels.pairwise_nn_set(feats, self._len[:n])
        return float(np.percentile(maxima, T_PERCENTILE))

    # -- insertion ---------------------------------------------------------

    def insert(self, feature: FeatureVector, meta: NodeMeta) -> InsertResult:
        """Add one query node, linking it to its best in-memory neighbor
        when that similarity reaches T. Ties break to the most recent node."""
        if self.threshold is None:
            raise ContractError("store is not initialized; no threshold available")
        self._check_feature(feature)
        n = self._n_live
        best_slot = -1
        best_sim = -1.0
        if n > 0:
            if feature.positionwise:
                counts = kernels.count_equal_rows(self._feat, n, feature.hashes)
                sims = counts / float(self._L)
            else:
                counts = kernels.intersect_count_rows(
                    self._feat, self._len, n, feature.hashes
                )
                sims = counts / np.maximum(
                    np.maximum(self._len[:n], len(feature)), 1
                )
            # last occurrence of the max: most recently inserted wins ties
            rev = int(np.argmax(sims[::-1]))
            best_slot = n - 1 - rev
            best_sim = float(sims[best_slot])

        node_id = self._add_node(feature, meta)
        self.insertion_count += 1
        edge = None
        if best_slot >= 0 and best_sim >= self.threshold:
            target = int(self._slot_node[best_slot])
            edge = Edge(a=node_id, b=target, weight=best_sim)
            comp = self.components[self._node_component[target]]
            # the new node is always a fresh singleton, so this merge only
            # ever folds it into the target's component
            self.components.pop(self._node_component[node_id])
            comp.nodes.append(node_id)
            comp.edges.append(edge)
            comp.pas += best_sim
            self.multi_components[comp.cid] = comp
            self._node_component[node_id] = comp.cid
            self._node_degree[node_id] += 1
            self._node_degree[target] += 1
        else:
            comp = self.components[self._node_component[node_id]]
        return InsertResult(
            node_id=node_id,
            edge=edge,
            component_id=comp.cid,
            component_pas=comp.pas,
            component_size=comp.size,
        )

    def _add_node(self, feature: FeatureVector, meta: NodeMeta) -> int:
        slot = self._n_live
        if slot >= self._feat.shape[0]:
            self._grow(2 * self._feat.shape[0])
        node_id = self.next_node_id
        self.next_node_id += 1
        row = feature.hashes
        self._feat[slot, : row.shape[0]] = row
        self._feat[slot, row.shape[0] :] = -1
        self._len[slot] = row.shape[0]
        self._slot_node[slot] = node_id
        self._n_live += 1
        self._node_slot[node_id] = slot
        self._node_component[node_id] = node_id
        self._node_degree[node_id] = 0
        self._node_meta[node_id] = meta
        self.components[node_id] = Component(cid=node_id, nodes=[node_id])
        return node_id

    def _grow(self, new_cap: int):
        for name in ("_feat", "_len", "_slot_node"):
            old = getattr(self, name)
            shape = (new_cap,) + old.shape[1:]
            fresh = np.zeros(shape, dtype=old.dtype)
            fresh[: old.shape[0]] = old
            setattr(self, name, fresh)

    def _check_feature(self, fv: FeatureVector):
        if fv.extractor_id != self.params.extractor_id:
            raise ContractError(
                f"feature from {fv.extractor_id!r} does not match store "
                f"extractor {self.params.extractor_id!r}"
            )
        if fv.length != self._L:
            raise ContractError("feature length does not match store")

    # -- inspection --------------------------------------------------------

    def component_pas_snapshot(self) -> list[tuple[int, float, int]]:
        """Consistent (component id, pas, size) triples for all live components."""
        return [(c.cid, c.pas, c.size) for c in self.components.values()]

    def component_of_node(self, node_id: int) -> Component:
        return self.components[self._node_component[node_id]]

    def node_meta(self, node_id: int) -> NodeMeta:
        return self._node_meta[node_id]

    def node_degree(self, node_id: int) -> int:
        return self._node_degree[node_id]

    def node_feature_row(self, node_id: int) -> tuple[np.ndarray, int]:
        slot = self._node_slot[node_id]
        return self._feat[slot].copy(), int(self._len[slot])

    @property
    def live_node_count(self) -> int:
        return self._n_live

    @property
    def live_edge_count(self) -> int:
        return sum(len(c.edges) for c in self.components.values())

    @property
    def live_component_count(self) -> int:
        return len(self.components)

    # -- eviction support ----------------------------------------------------

    def remove_components(self, cids: list[int]) -> list[Component]:
        """Drop the given components and compact feature storage.

        Returns the removed components (callers persist them); relative
        slot order of surviving nodes is preserved so recency tie-breaks
        stay stable.
        """
        removed = []
        dead_nodes = set()
        for cid in cids:
            comp = self.components.pop(cid)
            self.multi_components.pop(cid, None)
            removed.append(comp)
            dead_nodes.update(comp.nodes)
        if not dead_nodes:
            return removed
        keep = np.ones(self._n_live, dtype=bool)
        for nid in dead_nodes:
            keep[self._node_slot[nid]] = False
            del self._node_slot[nid]
            del self._node_component[nid]
            del self._node_degree[nid]
            del self._node_meta[nid]
        idx = np.flatnonzero(keep)
        new_n = idx.shape[0]
        self._feat[:new_n] = self._feat[idx]
        self._len[:new_n] = self._len[idx]
        self._slot_node[:new_n] = self._slot_node[idx]
        self._n_live = new_n
        for slot in range(new_n):
            self._node_slot[int(self._slot_node[slot])] = slot
        return removed
