"""Dense/sparse distance-distribution alignment by pre-sampling.

Calibration runs once per corpus:

1. divide every sparse vector by the largest sparse magnitude in the corpus,
2. sample queries and documents and measure, per query, how far the
   near-quantile distance sits above the nearest distance in each space,
3. scale the sparse distance by the ratio of the mean dense gap to the mean
   sparse gap,
4. optionally pick the fusion weight from a small grid by exact search on
   the sample against relevance labels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from hybrid_ann.errors import CalibrationError, ConfigError, StateError
from hybrid_ann.store import DocumentStore

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5
DEFAULT_ALPHA_GRID = (0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.7)


@dataclass(frozen=True)
class AlignmentParams:
    norm_denominator: float
    gamma: float
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    query_fraction: float = 0.01
    doc_fraction: float = 0.01

    def __post_init__(self):
        if not self.norm_denominator > 0:
            raise ConfigError("norm_denominator must be positive")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")

    def with_alpha(self, alpha: float) -> "AlignmentParams":
        return replace(self, alpha=float(alpha))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AlignmentParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class SamplePlan:
    query_fraction: float = 0.01
    doc_fraction: float = 0.01
    seed: int = 0
    max_queries: int = 1000
    max_docs: int = 100_000

    def __post_init__(self):
        for name in ("query_fraction", "doc_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")

    def sample(self, n_queries: int, n_docs: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted query and document ids; the same seed always gives the same ids."""
        rng = np.random.default_rng(self.seed)
        nq = min(n_queries, self.max_queries, max(1, math.ceil(self.query_fraction * n_queries)))
        nd = min(n_docs, self.max_docs, max(1, math.ceil(self.doc_fraction * n_docs)))
        q = np.sort(rng.choice(n_queries, size=nq, replace=False))
        d = np.sort(rng.choice(n_docs, size=nd, replace=False))
        return q, d


@dataclass(frozen=True)
class WeightSweep:
    candidate_alphas: tuple[float, ...] = DEFAULT_ALPHA_GRID

    def __post_init__(self):
        alphas = tuple(sorted(float(a) for a in self.candidate_alphas))
        if not alphas:
            raise ConfigError("weight sweep needs at least one candidate")
        if any(not 0.0 <= a <= 1.0 for a in alphas):
            raise ConfigError("candidate alphas must lie in [0, 1]")
        object.__setattr__(self, "candidate_alphas", alphas)


# ------------------------------------------------------------------ normalization


def compute_norm_denominator(docs) -> float:
    """Largest Euclidean magnitude among the documents' sparse halves."""
    if isinstance(docs, DocumentStore):
        norms = docs.sparse_norms()
    else:
        norms = np.array([v.norm() for v in docs], dtype=np.float64)
    top = float(norms.max()) if norms.size else 0.0
    if not top > 0.0:
        raise CalibrationError("every document has an empty sparse half; nothing to normalize")
    return top


def _divide(values: np.ndarray, denominator: float) -> np.ndarray:
    return (values.astype(np.float64) / denominator).astype(np.float32)


def normalize_store(store: DocumentStore, denominator: float) -> DocumentStore:
    if store.normalized:
        raise StateError("store is already normalized")
    if not denominator > 0:
        raise CalibrationError("denominator must be positive")
    return store.with_sparse_values(_divide(store.values, denominator), normalized=True,
                                    norm_denominator=float(denominator))


def normalize_queries(queries: DocumentStore, params: AlignmentParams) -> DocumentStore:
    """Queries share the corpus denominator; their own magnitudes are unknown at build time."""
    if queries.normalized:
        if queries.norm_denominator != params.norm_denominator:
            raise StateError("queries were normalized with a different denominator")
        return queries
    return normalize_store(queries, params.norm_denominator)


# ------------------------------------------------------------------ scale factor


def nearest_rank(sorted_row: np.ndarray, q: float) -> float:
    rank = max(1, math.ceil(round(q * sorted_row.size, 9)))
    return float(sorted_row[rank - 1])


def distance_matrices(queries: DocumentStore, docs: DocumentStore,
                      chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Dense and sparse IP distance matrices (queries x docs), float64."""
    dq = queries.dense.astype(np.float64)
    dd = docs.dense.astype(np.float64)
    sq = queries.to_csr().astype(np.float64)
    sd = docs.to_csr().astype(np.float64).T.tocsc()
    dense = 1.0 - dq @ dd.T
    sparse = np.empty_like(dense)
    for lo in range(0, queries.count, chunk):
        sparse[lo:lo + chunk] = 1.0 - (sq[lo:lo + chunk] @ sd).toarray()
    return dense, sparse


def distance_gaps(queries: DocumentStore, docs: DocumentStore,
                  quantile: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Per-query (near-quantile minus minimum) distance gaps in each space."""
    if queries.count == 0 or docs.count == 0:
        raise CalibrationError("calibration sample is empty")
    dense, sparse = distance_matrices(queries, docs)
    dense.sort(axis=1)
    sparse.sort(axis=1)
    dg = np.array([nearest_rank(r, quantile) - r[0] for r in dense])
    sg = np.array([nearest_rank(r, quantile) - r[0] for r in sparse])
    return dg, sg


def compute_gamma(sample_queries: DocumentStore, sample_docs: DocumentStore,
                  quantile: float = 0.01) -> float:
    """Ratio of the mean dense gap to the mean sparse gap over the sampled queries.

    Both inputs must already carry normalized sparse halves.
    """
    return gap_ratio(*distance_gaps(sample_queries, sample_docs, quantile))


def gap_ratio(dense_gaps: np.ndarray, sparse_gaps: np.ndarray) -> float:
    sparse_gap = float(np.mean(sparse_gaps))
    if not sparse_gap > 0.0:
        raise CalibrationError(
            "sparse distances are flat across the sample (zero gap); "
            "enlarge the document sample or raise the quantile")
    dense_gap = float(np.mean(dense_gaps))
    if not dense_gap > 0.0:
        raise CalibrationError("dense distances are flat across the sample; enlarge the sample")
    return dense_gap / sparse_gap


# ------------------------------------------------------------------ fusion weight


def _exact_topk(dense: np.ndarray, sparse: np.ndarray, alpha: float, gamma: float,
                k: int) -> np.ndarray:
    h = alpha * dense + (1.0 - alpha) * gamma * sparse
    ids = np.arange(h.shape[1])
    return np.stack([np.lexsort((ids, row))[:k] for row in h])


def sweep_alpha(sample_queries: DocumentStore, sample_docs: DocumentStore,
                sweep: WeightSweep, gamma: float, k: int,
                qrels: Mapping[int, Mapping[int, int]] | None = None,
                query_ids: Sequence[int] | None = None,
                doc_ids: Sequence[int] | None = None) -> float:
    """Pick the candidate weight with the best mean recall@k against the labels.

    ``query_ids``/``doc_ids`` map sample rows back to the ids used in ``qrels``
    (default: row positions). Ties prefer the weight nearest 0.5, then the
    smaller weight.
    """
    if qrels is None:
        raise ConfigError("sweep_alpha needs relevance labels (qrels); "
                          f"pass them or keep the default alpha={DEFAULT_ALPHA}")
    alphas = sweep.candidate_alphas
    if len(alphas) == 1:
        return alphas[0]
    qids = np.arange(sample_queries.count) if query_ids is None else np.asarray(query_ids)
    dids = np.arange(sample_docs.count) if doc_ids is None else np.asarray(doc_ids)
    doc_pos = {int(d): i for i, d in enumerate(dids)}
    rel_rows, rel_sets = [], []
    for row, qid in enumerate(qids):
        rel = {doc_pos[d] for d, g in qrels.get(int(qid), {}).items() if g > 0 and d in doc_pos}
        if rel:
            rel_rows.append(row)
            rel_sets.append(rel)
    if not rel_rows:
        raise ConfigError("no sampled query has a relevant document inside the document sample")
    dense, sparse = distance_matrices(sample_queries.subset(rel_rows), sample_docs)
    kk = min(k, sample_docs.count)
    scores = []
    for a in alphas:
        top = _exact_topk(dense, sparse, a, gamma, kk)
        rec = [len(rel & set(t.tolist())) / min(len(rel), kk) for t, rel in zip(top, rel_sets)]
        scores.append(float(np.mean(rec)))
        log.info("alpha=%.3f recall@%d=%.4f", a, kk, scores[-1])
    best = max(scores)
    tied = [a for a, s in zip(alphas, scores) if abs(s - best) <= 1e-12]
    return min(tied, key=lambda a: (abs(a - 0.5), a))


# ------------------------------------------------------------------ pipeline


@dataclass
class Calibration:
    params: AlignmentParams
    docs: DocumentStore
    dense_gaps: np.ndarray = field(repr=False)
    sparse_gaps: np.ndarray = field(repr=False)
    sample_query_ids: np.ndarray = field(repr=False)
    sample_doc_ids: np.ndarray = field(repr=False)


def calibrate(docs: DocumentStore, queries: DocumentStore, plan: SamplePlan = SamplePlan(),
              sweep: WeightSweep | None = None,
              qrels: Mapping[int, Mapping[int, int]] | None = None,
              k: int = 10, quantile: float = 0.01,
              full_corpus_docs: bool = False) -> Calibration:
    """Normalize the corpus and derive (denominator, gamma, alpha).

    Without ``qrels`` the weight stays at the default 0.5. ``full_corpus_docs``
    measures the gaps against every document instead of the document sample.
    """
    denominator = compute_norm_denominator(docs)
    normed = normalize_store(docs, denominator)
    qn = normalize_store(queries, denominator) if not queries.normalized else queries
    q_ids, d_ids = plan.sample(queries.count, docs.count)
    if full_corpus_docs:
        d_ids = np.arange(docs.count)
    sq = qn.subset(q_ids)
    dg, sg = distance_gaps(sq, normed.subset(d_ids), quantile)
    gamma = gap_ratio(dg, sg)
    alpha = DEFAULT_ALPHA
    if qrels is not None and sweep is not None:
        # relevant documents of the sampled queries join the document sample so labels can score
        extra = {d for q in q_ids for d, g in qrels.get(int(q), {}).items() if g > 0}
        sweep_docs = np.union1d(d_ids, np.fromiter(extra, dtype=np.int64, count=len(extra)))
        alpha = sweep_alpha(sq, normed.subset(sweep_docs), sweep, gamma, k, qrels,
                            query_ids=q_ids, doc_ids=sweep_docs)
    params = AlignmentParams(norm_denominator=denominator, gamma=gamma, alpha=alpha,
                             seed=plan.seed, query_fraction=plan.query_fraction,
                             doc_fraction=plan.doc_fraction)
    return Calibration(params, normed, dg, sg, q_ids, d_ids)
