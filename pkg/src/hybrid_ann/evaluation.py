"""Exhaustive hybrid search (ground truth) and retrieval-quality metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numba import njit, prange

from hybrid_ann._graph_kernels import _lt, _max_pop, _max_push, _sort_pairs
from hybrid_ann._kernels import METRIC_DENSE, METRIC_HYBRID, N_COUNTERS, point_distance
from hybrid_ann.alignment import AlignmentParams, normalize_queries
from hybrid_ann.distance import HybridVector
from hybrid_ann.errors import ConfigError, StateError
from hybrid_ann.store import DocumentStore

log = logging.getLogger(__name__)

Qrels = dict[int, dict[int, int]]


@dataclass
class GroundTruth:
    """Exact top-k per query, ascending by (distance, id)."""

    ids: np.ndarray          # (queries, k) int64
    distances: np.ndarray    # (queries, k) float32

    @property
    def k(self) -> int:
        return int(self.ids.shape[1])

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@njit(cache=True)
def _topk_scan(qd, qi, qv, dense, indptr, indices, values, metric, alpha, gamma, k,
               keys, ids, counters):
    size = 0
    # ascending id scan; ties resolved by the (distance, id) order
    for node in range(dense.shape[0]):
        d = point_distance(metric, qd, qi, qv, node, dense, indptr, indices, values,
                           alpha, gamma, counters)
        if size < k:
            size = _max_push(keys, ids, size, d, node)
        elif _lt(d, node, keys[0], ids[0]):
            size = _max_pop(keys, ids, size)
            size = _max_push(keys, ids, size, d, node)
    _sort_pairs(keys, ids, size)
    return size


@njit(cache=True, parallel=True)
def _brute_force_batch(q_dense, q_indptr, q_indices, q_values, dense, indptr, indices,
                       values, metric, alpha, gamma, k):
    nq = q_dense.shape[0]
    out_ids = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k), dtype=np.float64)
    for q in prange(nq):
        keys = np.empty(k + 1, dtype=np.float64)
        ids = np.empty(k + 1, dtype=np.int32)
        counters = np.zeros(N_COUNTERS, dtype=np.int64)
        a = q_indptr[q]
        b = q_indptr[q + 1]
        _topk_scan(q_dense[q], q_indices[a:b], q_values[a:b], dense, indptr, indices,
                   values, metric, alpha, gamma, k, keys, ids, counters)
        for t in range(k):
            out_ids[q, t] = ids[t]
            out_d[q, t] = keys[t]
    return out_ids, out_d


def brute_force(store: DocumentStore, queries: DocumentStore, params: AlignmentParams | None,
                k: int, dense_only: bool = False) -> GroundTruth:
    """Exact top-k for every query by scanning the whole store.

    ``queries`` may be raw; they are normalized with the store's denominator.
    ``dense_only`` ranks by the dense distance alone (no params needed).
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    k = min(k, store.count)
    if dense_only:
        metric, alpha, gamma = METRIC_DENSE, 1.0, 1.0
    else:
        if params is None:
            raise StateError("hybrid ground truth needs alignment params")
        if not store.normalized:
            raise StateError("store must be normalized before computing hybrid ground truth")
        queries = normalize_queries(queries, params)
        metric, alpha, gamma = METRIC_HYBRID, params.alpha, params.gamma
    ids, dist = _brute_force_batch(queries.dense64, queries.indptr, queries.indices,
                                   queries.values, store.dense64, store.indptr, store.indices,
                                   store.values, metric, float(alpha), float(gamma), k)
    return GroundTruth(ids, dist.astype(np.float32))


def brute_force_topk(store: DocumentStore, q: HybridVector, params: AlignmentParams | None,
                     k: int, dense_only: bool = False) -> GroundTruth:
    qs = DocumentStore.from_vectors([q], store.sparse_dim)
    if store.normalized and not dense_only:
        qs = normalize_queries(qs, params)
    return brute_force(store, qs, params, k, dense_only)


# ------------------------------------------------------------------ metrics


def recall_at_k(retrieved: Sequence[int], truth: Sequence[int], k: int) -> float:
    if k > len(retrieved) or k > len(truth):
        raise ValueError(f"k={k} exceeds a list length ({len(retrieved)}, {len(truth)})")
    return len(set(list(retrieved)[:k]) & set(list(truth)[:k])) / k


def mean_recall(retrieved: np.ndarray, truth: np.ndarray, k: int) -> float:
    return float(np.mean([recall_at_k(r, t, k) for r, t in zip(retrieved, truth)]))


def dcg(gains: Sequence[float]) -> float:
    return sum(g / math.log2(rank + 2) for rank, g in enumerate(gains))


def ndcg_at_10(retrieved: Sequence[int], qrels_row: Mapping[int, int]) -> float:
    if not qrels_row:
        log.warning("empty qrels row; ndcg@10 is 0")
        return 0.0
    gains = [2.0 ** qrels_row.get(int(d), 0) - 1.0 for d in list(retrieved)[:10]]
    ideal = sorted((2.0 ** g - 1.0 for g in qrels_row.values()), reverse=True)[:10]
    idcg = dcg(ideal)
    return dcg(gains) / idcg if idcg > 0 else 0.0


def mrr_at_10(retrieved: Sequence[int], qrels_row: Mapping[int, int]) -> float:
    if not qrels_row:
        log.warning("empty qrels row; mrr@10 is 0")
        return 0.0
    for rank, d in enumerate(list(retrieved)[:10], start=1):
        if qrels_row.get(int(d), 0) > 0:
            return 1.0 / rank
    return 0.0


def evaluate(retrieved: np.ndarray, truth: GroundTruth | None = None,
             qrels: Qrels | None = None, query_ids: Sequence[int] | None = None,
             k: int = 10) -> dict[str, float]:
    """Mean recall@k against ground truth and ndcg@10/mrr@10 against qrels."""
    out: dict[str, float] = {}
    retrieved = np.asarray(retrieved)
    if truth is not None:
        kk = min(k, truth.k, retrieved.shape[1])
        out[f"recall{k}"] = mean_recall(retrieved, truth.ids, kk)
    if qrels is not None:
        qids = range(len(retrieved)) if query_ids is None else query_ids
        rows = [(r, qrels[q]) for r, q in zip(retrieved, qids) if q in qrels]
        out["ndcg10"] = float(np.mean([ndcg_at_10(r, row) for r, row in rows])) if rows else 0.0
        out["mrr10"] = float(np.mean([mrr_at_10(r, row) for r, row in rows])) if rows else 0.0
    return out
