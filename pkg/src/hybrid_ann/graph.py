"""Multi-layer navigable graph over a :class:`DocumentStore`.

Three construction modes:

* ``dense-only``   HNSW insertion with the dense distance only.
* ``two-stage``    the dense-only graph, then every node re-selects its
                   layer-0 neighbours from a short hybrid-distance search
                   started at itself.
* ``naive-hybrid`` HNSW insertion with the hybrid distance everywhere.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

from hybrid_ann import _graph_kernels as gk
from hybrid_ann._kernels import (
    DENSE_CALLS,
    METRIC_DENSE,
    METRIC_HYBRID,
    N_COUNTERS,
    SPARSE_CALLS,
)
from hybrid_ann.alignment import AlignmentParams
from hybrid_ann.distance import PruneConfig
from hybrid_ann.errors import BuildError, ConfigError, StateError
from hybrid_ann.store import DocumentStore

log = logging.getLogger(__name__)


class BuildStage(str, enum.Enum):
    DENSE_BUILT = "dense_built"
    HYBRID_REFINED = "hybrid_refined"
    NAIVE_HYBRID = "naive_hybrid"


BUILD_MODES = ("two-stage", "naive-hybrid", "dense-only")


@dataclass(frozen=True)
class BuildConfig:
    m: int = 32
    cef_dense: int = 200
    cef_hybrid: int = 32
    level_lambda: float | None = None
    threads: int = 1
    prune: PruneConfig = PruneConfig()
    seed: int = 0
    strict_m: bool = False
    batch_size: int = 256

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError("m must be at least 2")
        if self.cef_dense < self.m:
            raise ConfigError("cef_dense must be >= m")
        if self.cef_hybrid < 1:
            raise ConfigError("cef_hybrid must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.level_lambda is None:
            object.__setattr__(self, "level_lambda", 1.0 / math.log(self.m))

    @property
    def refine_limit(self) -> int:
        return self.m if self.strict_m else 2 * self.m


@dataclass
class BuildStats:
    mode: str
    dense_seconds: float = 0.0
    refine_seconds: float = 0.0
    dense_stage_counters: np.ndarray = field(default_factory=lambda: np.zeros(N_COUNTERS, np.int64))
    refine_counters: np.ndarray = field(default_factory=lambda: np.zeros(N_COUNTERS, np.int64))

    @property
    def total_seconds(self) -> float:
        return self.dense_seconds + self.refine_seconds

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "build_seconds": round(self.total_seconds, 6),
            "stage1_seconds": round(self.dense_seconds, 6),
            "stage2_seconds": round(self.refine_seconds, 6),
            "stage1_dense_calls": int(self.dense_stage_counters[DENSE_CALLS]),
            "stage1_sparse_calls": int(self.dense_stage_counters[SPARSE_CALLS]),
            "stage2_dense_calls": int(self.refine_counters[DENSE_CALLS]),
            "stage2_sparse_calls": int(self.refine_counters[SPARSE_CALLS]),
        }


@dataclass(eq=False)
class HybridGraph:
    store: DocumentStore
    params: AlignmentParams | None
    m: int
    level_lambda: float
    levels: np.ndarray
    links0: np.ndarray
    deg0: np.ndarray
    upper_off: np.ndarray
    upper_links: np.ndarray
    upper_deg: np.ndarray
    entry_point: int
    max_level: int
    build_stage: BuildStage
    stats: BuildStats | None = None
    prune_queries: bool = False  # queries get the store's pruning ratio at search time

    @classmethod
    def allocate(cls, store: DocumentStore, params: AlignmentParams | None, m: int,
                 level_lambda: float, levels: np.ndarray) -> "HybridGraph":
        n = store.count
        levels = np.ascontiguousarray(levels, dtype=np.int32)
        upper_off = np.full(n, -1, dtype=np.int64)
        has_upper = levels > 0
        starts = np.concatenate([[0], np.cumsum(levels.astype(np.int64))[:-1]])
        upper_off[has_upper] = starts[has_upper]
        total = int(levels.sum())
        return cls(
            store=store, params=params, m=m, level_lambda=level_lambda, levels=levels,
            links0=np.zeros((n, 2 * m), dtype=np.int32),
            deg0=np.zeros(n, dtype=np.int32),
            upper_off=upper_off,
            upper_links=np.zeros((total, m), dtype=np.int32),
            upper_deg=np.zeros(total, dtype=np.int32),
            entry_point=-1, max_level=-1, build_stage=BuildStage.DENSE_BUILT,
        )

    @property
    def count(self) -> int:
        return self.store.count

    @property
    def arrays(self):
        return (self.links0, self.deg0, self.levels, self.upper_off, self.upper_links,
                self.upper_deg)

    def neighbors(self, node: int, level: int = 0) -> np.ndarray:
        if level == 0:
            return self.links0[node, : self.deg0[node]]
        if level > self.levels[node]:
            raise IndexError(f"node {node} has no level {level}")
        slot = self.upper_off[node] + level - 1
        return self.upper_links[slot, : self.upper_deg[slot]]

    def layer_nodes(self, level: int) -> np.ndarray:
        return np.flatnonzero(self.levels >= level)

    def copy(self) -> "HybridGraph":
        return replace(self, links0=self.links0.copy(), deg0=self.deg0.copy(),
                       upper_links=self.upper_links.copy(), upper_deg=self.upper_deg.copy())

    def audit(self) -> None:
        """Raise AssertionError if any structural invariant is violated."""
        n = self.count
        assert n == 0 or (0 <= self.entry_point < n), "entry point out of range"
        if n:
            assert self.levels[self.entry_point] == self.levels.max(), "entry point is not on the top level"
            assert self.max_level == self.levels.max()
        for level in range(0, max(self.max_level, 0) + 1):
            cap = 2 * self.m if level == 0 else self.m
            for node in self.layer_nodes(level):
                nb = self.neighbors(int(node), level)
                assert nb.size <= cap, f"node {node} level {level}: degree {nb.size} > {cap}"
                assert np.all((nb >= 0) & (nb < n)), f"node {node}: edge endpoint out of range"
                assert not np.any(nb == node), f"node {node}: self-loop"
                assert np.unique(nb).size == nb.size, f"node {node}: duplicate edge"
                if level > 0:
                    assert np.all(self.levels[nb] >= level), f"node {node}: edge to a node absent from level {level}"

    def kernel_params(self, alpha: float | None = None) -> tuple[float, float]:
        if self.params is None:
            return 1.0, 1.0
        a = self.params.alpha if alpha is None else alpha
        return float(a), float(self.params.gamma)


# ------------------------------------------------------------------ construction


def assign_levels(n: int, level_lambda: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n)  # (0, 1]
    return np.floor(-np.log(u) * level_lambda).astype(np.int32)


def _prepare_store(store: DocumentStore, cfg: BuildConfig) -> DocumentStore:
    if cfg.prune.ratio != store.prune_ratio:
        if store.prune_ratio != 0.0:
            raise StateError("store was pruned with a different ratio")
        return store.pruned(cfg.prune)
    return store


def _insert_all(graph: HybridGraph, cfg: BuildConfig, metric: int, alpha: float,
                gamma: float, counters: np.ndarray) -> None:
    S = graph.store.kernel_arrays()
    G = graph.arrays
    n = graph.count
    if cfg.threads == 1 or n <= cfg.batch_size:
        graph.entry_point, graph.max_level = gk.build_sequential(
            S, G, cfg.m, cfg.cef_dense, metric, alpha, gamma, counters, 0, -1, -1)
        return
    # seed sequentially, then plan batches in parallel and commit them in id order
    seed_n = cfg.batch_size
    entry, max_level = _build_prefix(graph, cfg, metric, alpha, gamma, counters, seed_n)
    top_all = int(graph.levels.max())
    prev = numba.get_num_threads()
    numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        nt = numba.get_num_threads()
        counters_t = np.zeros((nt, N_COUNTERS), dtype=np.int64)
        for lo in range(seed_n, n, cfg.batch_size):
            hi = min(n, lo + cfg.batch_size)
            sel_all = np.zeros((hi - lo, top_all + 1, 2 * cfg.m + 1), dtype=np.int32)
            cnt_all = np.zeros((hi - lo, top_all + 1), dtype=np.int32)
            gk._plan_batch(lo, hi, metric, S, G, entry, max_level, cfg.m, cfg.cef_dense,
                           alpha, gamma, nt, sel_all, cnt_all, counters_t)
            entry, max_level = gk._commit_batch(lo, hi, metric, S, G, entry, max_level,
                                                cfg.m, alpha, gamma, counters, sel_all, cnt_all)
        counters += counters_t.sum(axis=0)
    finally:
        numba.set_num_threads(prev)
    graph.entry_point, graph.max_level = int(entry), int(max_level)


def _build_prefix(graph, cfg, metric, alpha, gamma, counters, upto):
    """Sequentially insert nodes [0, upto) by building on a truncated view."""
    S = graph.store.kernel_arrays()
    prefix_S = (S[0][:upto], S[1][: upto + 1], S[2], S[3])
    G = graph.arrays
    prefix_G = (G[0][:upto], G[1][:upto], G[2][:upto], G[3][:upto], G[4], G[5])
    return gk.build_sequential(prefix_S, prefix_G, cfg.m, cfg.cef_dense, metric, alpha,
                               gamma, counters, 0, -1, -1)


def _new_graph(store: DocumentStore, params: AlignmentParams | None,
               cfg: BuildConfig) -> HybridGraph:
    if store.count == 0:
        raise BuildError("cannot build an index over an empty store")
    levels = assign_levels(store.count, cfg.level_lambda, cfg.seed)
    return HybridGraph.allocate(store, params, cfg.m, cfg.level_lambda, levels)


def build_dense_stage(store: DocumentStore, cfg: BuildConfig = BuildConfig(),
                      params: AlignmentParams | None = None) -> HybridGraph:
    """HNSW construction using the dense distance only; never touches sparse values."""
    store = _prepare_store(store, cfg)
    graph = _new_graph(store, params, cfg)
    graph.prune_queries = cfg.prune.prune_queries
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    t0 = time.perf_counter()
    _insert_all(graph, cfg, METRIC_DENSE, 1.0, 1.0, counters)
    stats = BuildStats(mode="dense-only", dense_seconds=time.perf_counter() - t0,
                       dense_stage_counters=counters)
    graph.stats = stats
    graph.build_stage = BuildStage.DENSE_BUILT
    return graph


def refine_hybrid_stage(graph: HybridGraph, cfg: BuildConfig = BuildConfig(),
                        alpha: float | None = None) -> HybridGraph:
    """Replace every layer-0 list with neighbours chosen under the hybrid distance.

    All searches read the frozen stage-1 layer 0, so the result does not depend
    on the thread count. Upper layers are left untouched.
    """
    if graph.build_stage is not BuildStage.DENSE_BUILT:
        raise StateError(f"refinement needs a dense_built graph, got {graph.build_stage.value}")
    if graph.params is None:
        raise StateError("refinement needs alignment params (calibrate first)")
    if not graph.store.normalized:
        raise StateError("refinement needs a normalized store")
    a, gamma = graph.kernel_params(alpha)
    S = graph.store.kernel_arrays()
    G = graph.arrays
    n = graph.count
    limit = cfg.refine_limit
    new_links = np.zeros((n, 2 * graph.m), dtype=np.int32)
    new_deg = np.zeros(n, dtype=np.int32)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    t0 = time.perf_counter()
    if cfg.threads == 1:
        gk.refine_plan_sequential(S, G, cfg.cef_hybrid, limit, a, gamma, new_links,
                                  new_deg, counters)
    else:
        prev = numba.get_num_threads()
        numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
        try:
            nt = numba.get_num_threads()
            counters_t = np.zeros((nt, N_COUNTERS), dtype=np.int64)
            gk.refine_plan(S, G, cfg.cef_hybrid, limit, a, gamma, nt, new_links, new_deg,
                           counters_t)
            counters += counters_t.sum(axis=0)
        finally:
            numba.set_num_threads(prev)
    gk.refine_commit(S, G, graph.m, a, gamma, new_links, new_deg, counters)
    elapsed = time.perf_counter() - t0
    stats = graph.stats or BuildStats(mode="two-stage")
    graph.stats = BuildStats(mode="two-stage", dense_seconds=stats.dense_seconds,
                             refine_seconds=elapsed,
                             dense_stage_counters=stats.dense_stage_counters,
                             refine_counters=counters)
    graph.build_stage = BuildStage.HYBRID_REFINED
    return graph


def build_naive_hybrid(store: DocumentStore, params: AlignmentParams,
                       cfg: BuildConfig = BuildConfig(), alpha: float | None = None) -> HybridGraph:
    """Plain HNSW construction with the hybrid distance for every comparison."""
    if params is None:
        raise StateError("naive hybrid construction needs alignment params")
    if not store.normalized:
        raise StateError("naive hybrid construction needs a normalized store")
    store = _prepare_store(store, cfg)
    graph = _new_graph(store, params, cfg)
    graph.prune_queries = cfg.prune.prune_queries
    a, gamma = graph.kernel_params(alpha)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    t0 = time.perf_counter()
    _insert_all(graph, cfg, METRIC_HYBRID, a, gamma, counters)
    graph.stats = BuildStats(mode="naive-hybrid", dense_seconds=time.perf_counter() - t0,
                             dense_stage_counters=counters)
    graph.build_stage = BuildStage.NAIVE_HYBRID
    return graph


def build_index(store: DocumentStore, params: AlignmentParams | None,
                cfg: BuildConfig = BuildConfig(), mode: str = "two-stage") -> HybridGraph:
    if mode == "dense-only":
        return build_dense_stage(store, cfg, params)
    if mode == "two-stage":
        if params is None:
            raise StateError("two-stage construction needs alignment params (calibrate first)")
        return refine_hybrid_stage(build_dense_stage(store, cfg, params), cfg)
    if mode == "naive-hybrid":
        return build_naive_hybrid(store, params, cfg)
    raise ConfigError(f"unknown build mode {mode!r}; expected one of {BUILD_MODES}")


def heuristic_select(candidates: Sequence[tuple[int, float]], limit: int, distance_fn) -> list[int]:
    """Pure-Python neighbour-diversity selection (reference for the compiled one).

    ``candidates`` are (id, distance-to-base) pairs sorted ascending;
    ``distance_fn(a, b)`` gives the distance between two candidates.
    """
    kept: list[int] = []
    rejected: list[int] = []
    for cid, dist in candidates:
        if len(kept) >= limit:
            break
        if all(dist < distance_fn(cid, r) for r in kept):
            kept.append(cid)
        else:
            rejected.append(cid)
    for cid in rejected:
        if len(kept) >= limit:
            break
        kept.append(cid)
    return kept


def heuristic_select_store(store: DocumentStore, base: int, candidates: Sequence[int],
                           limit: int, params: AlignmentParams | None = None) -> list[int]:
    """Run the compiled selection for ``base`` over candidate node ids."""
    metric = METRIC_DENSE if params is None else METRIC_HYBRID
    alpha, gamma = (1.0, 1.0) if params is None else (params.alpha, params.gamma)
    S = store.kernel_arrays()
    cand = np.asarray(candidates, dtype=np.int32)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    dists = np.array([gk._node_dist(metric, base, int(c), S, alpha, gamma, counters)
                      for c in cand], dtype=np.float64)
    gk._sort_pairs(dists, cand, cand.size)
    out = np.zeros(max(limit, 1), dtype=np.int32)
    rej = np.zeros(cand.size + 1, dtype=np.int32)
    kept = gk.heuristic_select(dists, cand, cand.size, limit, metric, S, alpha, gamma,
                               counters, out, rej)
    return out[:kept].tolist()
