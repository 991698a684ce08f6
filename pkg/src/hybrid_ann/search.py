"""Query-time search over a :class:`HybridGraph`.

``two_stage``: dense greedy descent through the upper layers, a dense beam
search on layer 0, then both queues are re-scored with the hybrid distance and
the beam search continues (same visited set) under the hybrid distance.
``naive_hybrid``: the hybrid distance everywhere. ``dense_only``: the two-stage
control flow with the dense distance in both phases.

Each phase stops like a standard beam search, or earlier when an expansion
inserts fewer than ``sef * (1 - tau)`` nodes into the result queue.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numba
import numpy as np

from hybrid_ann import _graph_kernels as gk
from hybrid_ann._kernels import (
    DENSE_CALLS,
    EXPANSIONS_STAGE1,
    EXPANSIONS_STAGE2,
    N_COUNTERS,
    SPARSE_CALLS,
    SPARSE_CALLS_STAGE1,
)
from hybrid_ann.alignment import normalize_queries
from hybrid_ann.distance import HybridVector, PruneConfig
from hybrid_ann.errors import ConfigError, StateError
from hybrid_ann.graph import HybridGraph
from hybrid_ann.store import DocumentStore

MODES = {"two_stage": gk.MODE_TWO_STAGE, "naive_hybrid": gk.MODE_NAIVE_HYBRID,
         "dense_only": gk.MODE_DENSE_ONLY}


@dataclass(frozen=True)
class SearchConfig:
    k: int = 10
    sef: int = 64
    tau_dense: float = 1.0
    tau_hybrid: float = 1.0
    mode: str = "two_stage"
    alpha: float | None = None  # overrides the calibrated weight when set
    fresh_stage2: bool = False  # restart stage 2 from its entry instead of continuing

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown search mode {self.mode!r}; expected one of {sorted(MODES)}")
        if self.k < 1 or self.sef < self.k:
            raise ConfigError(f"need 1 <= k <= sef, got k={self.k}, sef={self.sef}")
        for name in ("tau_dense", "tau_hybrid"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class SearchTrace:
    dense_kernel_calls: int = 0
    sparse_kernel_calls: int = 0
    expansions_stage1: int = 0
    expansions_stage2: int = 0
    sparse_calls_stage1: int = 0

    @classmethod
    def from_counters(cls, c) -> "SearchTrace":
        return cls(int(c[DENSE_CALLS]), int(c[SPARSE_CALLS]), int(c[EXPANSIONS_STAGE1]),
                   int(c[EXPANSIONS_STAGE2]), int(c[SPARSE_CALLS_STAGE1]))


@dataclass
class ResultSet:
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.size)

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(i), float(d)) for i, d in zip(self.ids, self.distances)]


@dataclass
class BatchResult:
    ids: np.ndarray            # (queries, k), -1 where fewer results exist
    distances: np.ndarray      # (queries, k), inf padding
    counts: np.ndarray         # results per query
    counters: np.ndarray       # (queries, N_COUNTERS), slots as in SearchTrace
    stage1_ids: np.ndarray | None = None
    seconds: float = 0.0

    def result(self, q: int) -> ResultSet:
        n = int(self.counts[q])
        return ResultSet(self.ids[q, :n].copy(), self.distances[q, :n].copy())

    def trace(self, q: int) -> SearchTrace:
        return SearchTrace.from_counters(self.counters[q])

    @property
    def qps(self) -> float:
        return len(self.ids) / self.seconds if self.seconds > 0 else float("inf")

    def mean_calls(self) -> tuple[float, float]:
        return (float(self.counters[:, DENSE_CALLS].mean()),
                float(self.counters[:, SPARSE_CALLS].mean()))


def early_stop_check(updates_this_expansion: int, sef: int, tau: float) -> bool:
    """True when the expansion improved the result queue too little to go on."""
    return updates_this_expansion < gk.stop_threshold(sef, tau)


def prepare_queries(graph: HybridGraph, queries: DocumentStore,
                    prune: PruneConfig | None = None) -> DocumentStore:
    """Normalize raw queries like the corpus; prune them if the index asks for it."""
    if graph.params is not None and graph.store.normalized:
        queries = normalize_queries(queries, graph.params)
    if prune is None and graph.prune_queries:
        prune = PruneConfig(graph.store.prune_ratio, True)
    if prune is not None and prune.prune_queries and prune.ratio > 0:
        queries = queries.pruned(prune)
    return queries


def _check(graph: HybridGraph, queries: DocumentStore, cfg: SearchConfig) -> SearchConfig:
    if graph.entry_point < 0:
        raise StateError("graph has not been built")
    if cfg.mode != "dense_only":
        if graph.params is None:
            raise StateError(f"mode {cfg.mode} needs a calibrated graph (alignment params)")
    if queries.dense_dim != graph.store.dense_dim:
        raise ConfigError(f"query dense dim {queries.dense_dim} != index dim {graph.store.dense_dim}")
    if cfg.k > graph.count:
        # everything reachable gets ranked
        cfg = replace(cfg, k=graph.count, sef=max(cfg.sef, graph.count))
    return cfg


def search_batch(graph: HybridGraph, queries: DocumentStore, cfg: SearchConfig,
                 record_stage1: bool = False, query_threads: int = 1,
                 prune: PruneConfig | None = None) -> BatchResult:
    """Search every query in turn on one thread; ``seconds`` is the wall time."""
    cfg = _check(graph, queries, cfg)
    queries = prepare_queries(graph, queries, prune)
    alpha, gamma = graph.kernel_params(cfg.alpha)
    S = graph.store.kernel_arrays()
    G = graph.arrays
    args = (queries.dense64, queries.indptr, queries.indices, queries.values, S, G,
            graph.entry_point, graph.max_level, MODES[cfg.mode], cfg.sef, cfg.k,
            float(cfg.tau_dense), float(cfg.tau_hybrid), alpha, gamma, cfg.fresh_stage2)
    stage1 = None
    if query_threads > 1:
        prev = numba.get_num_threads()
        numba.set_num_threads(min(query_threads, numba.config.NUMBA_NUM_THREADS))
        try:
            t0 = time.perf_counter()
            ids, dist, counts, counters = gk.search_batch_parallel(*args, query_threads)
            seconds = time.perf_counter() - t0
        finally:
            numba.set_num_threads(prev)
    else:
        t0 = time.perf_counter()
        ids, dist, counts, counters, stage1 = gk.search_batch(*args, record_stage1)
        seconds = time.perf_counter() - t0
        if not record_stage1:
            stage1 = None
    return BatchResult(ids, dist, counts, counters, stage1, seconds)


def search(graph: HybridGraph, q: HybridVector, cfg: SearchConfig) -> tuple[ResultSet, SearchTrace]:
    qs = DocumentStore.from_vectors([q], graph.store.sparse_dim)
    res = search_batch(graph, qs, cfg)
    return res.result(0), res.trace(0)


def stage_transition(W, C, q: HybridVector, graph: HybridGraph, alpha: float | None = None):
    """Re-score dense-keyed queues with the hybrid distance.

    ``W`` and ``C`` are sequences of (id, dense distance); ``q`` must already be
    normalized. Returns (W', C', entry, sparse_calls) with W' and C' sorted
    ascending and ``entry`` the best element of W'.
    """
    if graph.params is None:
        raise StateError("stage transition needs alignment params")
    a, gamma = graph.kernel_params(alpha)
    n = graph.count
    Wk = np.array([d for _, d in W], dtype=np.float64)
    Wi = np.array([i for i, _ in W], dtype=np.int32)
    Ck = np.array([d for _, d in C], dtype=np.float64)
    Ci = np.array([i for i, _ in C], dtype=np.int32)
    memo = np.zeros(n, dtype=np.float64)
    memo_tag = np.zeros(n, dtype=np.int64)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    entry = gk.transition(q.sparse.indices, q.sparse.values, graph.store.kernel_arrays(),
                          Wk, Wi, Wi.size, Ck, Ci, Ci.size, memo, memo_tag, 1, a, gamma,
                          counters)
    gk._sort_pairs(Wk, Wi, Wi.size)
    gk._sort_pairs(Ck, Ci, Ci.size)
    return (list(zip(Wi.tolist(), Wk.tolist())), list(zip(Ci.tolist(), Ck.tolist())),
            int(entry), int(counters[SPARSE_CALLS]))
