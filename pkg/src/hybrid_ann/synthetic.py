"""Seeded synthetic hybrid corpora with a tunable dense/sparse correlation.

Every document mixes a few topics (unit centres) with Dirichlet weights, so the
corpus is a continuum rather than a set of islands. The dense half is the
normalized weighted sum of its topic centres plus noise. Every sparse term has
a random direction in dense space, and a topic's vocabulary is the set of terms
whose directions best match its centre, so related topics share terms. Each
sparse entry is, with probability ``rho``, drawn from the vocabulary of one of
the document's topics (chosen by mixture weight, term chosen by vocabulary
weight), and otherwise is a uniform random term with an unrelated weight.
``rho = 0`` gives sparse halves that are independent of the dense halves.

Queries are perturbed copies of a target document: a noisy dense half and a
sparse half that keeps part of the target's entries. The target is the single
relevant document of each query (grade 1).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from hybrid_ann.errors import ConfigError
from hybrid_ann.store import DocumentStore


class SpecError(ConfigError):
    """An impossible synthetic dataset specification."""


@dataclass(frozen=True)
class SyntheticSpec:
    doc_count: int = 10_000
    query_count: int = 100
    dense_dim: int = 128
    sparse_dim: int = 30_000
    avg_nnz: int = 128
    rho: float = 0.6
    seed: int = 0
    query_nnz: int | None = None  # defaults to avg_nnz
    n_clusters: int = 64          # topic centres
    topics_per_doc: int = 3
    mixing: float = 0.5           # Dirichlet concentration of the topic weights
    cluster_spread: float = 0.5   # dense noise norm relative to the unit centre
    query_noise: float = 0.3
    query_keep: float = 0.5       # share of query entries copied from the target
    vocab_factor: int = 4         # cluster vocabulary size / avg_nnz
    term_focus: float = 8.0       # how sharply a term's direction picks clusters

    def __post_init__(self):
        if self.doc_count < 1 or self.query_count < 0:
            raise SpecError("doc_count must be >= 1 and query_count >= 0")
        if self.dense_dim < 1 or self.sparse_dim < 1:
            raise SpecError("dense_dim and sparse_dim must be positive")
        if not 1 <= self.avg_nnz <= self.sparse_dim:
            raise SpecError(f"avg_nnz={self.avg_nnz} must lie in [1, sparse_dim={self.sparse_dim}]")
        if self.query_nnz is not None and not 1 <= self.query_nnz <= self.sparse_dim:
            raise SpecError(f"query_nnz={self.query_nnz} must lie in [1, sparse_dim]")
        if not 0.0 <= self.rho <= 1.0:
            raise SpecError(f"rho must lie in [0, 1], got {self.rho}")
        if self.n_clusters < 1 or self.topics_per_doc < 1 or not self.mixing > 0:
            raise SpecError("n_clusters and topics_per_doc must be >= 1, mixing > 0")
        if not 0.0 <= self.query_keep <= 1.0:
            raise SpecError("query_keep must lie in [0, 1]")

    @property
    def clusters(self) -> int:
        return max(1, self.n_clusters)

    @property
    def vocab_size(self) -> int:
        return min(self.sparse_dim, self.vocab_factor * self.avg_nnz)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticData:
    docs: DocumentStore
    queries: DocumentStore
    qrels: dict[int, dict[int, int]]
    doc_topics: np.ndarray    # (docs, topics_per_doc) topic ids
    doc_weights: np.ndarray   # matching mixture weights
    target: np.ndarray

    @property
    def doc_cluster(self) -> np.ndarray:
        """Dominant topic of each document."""
        return self.doc_topics[np.arange(len(self.doc_topics)), self.doc_weights.argmax(axis=1)]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _gumbel_top(rng, log_w: np.ndarray, k: int) -> np.ndarray:
    """k indices sampled without replacement with probabilities ∝ exp(log_w)."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    keys = log_w + rng.gumbel(size=log_w.shape)
    return np.argpartition(-keys, k - 1)[:k] if k < log_w.size else np.arange(log_w.size)


def _cluster_vocab(rng, spec: SyntheticSpec, centers: np.ndarray):
    """Per-cluster vocabulary (term ids, log weights) derived from term directions."""
    m, n = spec.sparse_dim, spec.dense_dim
    v = spec.vocab_size
    term_dirs = _unit_rows(rng.standard_normal((m, n)))
    term_base = rng.normal(0.0, 0.5, size=m)
    vocab_ids = np.empty((centers.shape[0], v), dtype=np.int64)
    vocab_logw = np.empty((centers.shape[0], v))
    for lo in range(0, centers.shape[0], 64):
        hi = min(centers.shape[0], lo + 64)
        affinity = centers[lo:hi] @ term_dirs.T * spec.term_focus * np.sqrt(n) / 8.0
        for j in range(lo, hi):
            logits = affinity[j - lo] + term_base
            ids = _gumbel_top(rng, logits, v)
            vocab_ids[j] = ids
            vocab_logw[j] = logits[ids] - logits[ids].max()
    return vocab_ids, vocab_logw


def _sparse_row(rng, nnz: int, rho: float, topics, weights, vocab_ids, vocab_logw,
                m: int, forced=None):
    n_forced = 0 if forced is None else forced[0].size
    n_topic = rng.binomial(max(nnz - n_forced, 0), rho)
    per_topic = rng.multinomial(n_topic, weights)
    parts_i = [] if forced is None else [forced[0]]
    parts_v = [] if forced is None else [forced[1]]
    for t, cnt in zip(topics, per_topic):
        picks = _gumbel_top(rng, vocab_logw[t], min(int(cnt), vocab_ids.shape[1]))
        parts_i.append(vocab_ids[t][picks])
        # topic weights follow the vocabulary weights, with mild per-document jitter
        parts_v.append(np.exp(vocab_logw[t][picks] * 0.5) * rng.lognormal(0.0, 0.25, picks.size))
    taken = np.concatenate(parts_i) if parts_i else np.empty(0, dtype=np.int64)
    need = nnz - np.unique(taken).size
    if need > 0:
        extra = rng.choice(m, size=min(m, need + taken.size + 8), replace=False)
        extra = extra[~np.isin(extra, taken)][:need]
        parts_i.append(extra)
        parts_v.append(rng.exponential(0.5, extra.size))
    ids = np.concatenate(parts_i)
    vals = np.concatenate(parts_v)
    ids, first = np.unique(ids, return_index=True)
    vals = vals[first]
    return ids.astype(np.uint32), vals.astype(np.float32)


def _assemble(dense: np.ndarray, rows, sparse_dim: int) -> DocumentStore:
    lens = np.array([r[0].size for r in rows], dtype=np.int64)
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(lens, out=indptr[1:])
    if rows:
        indices = np.concatenate([r[0] for r in rows]).astype(np.uint32)
        values = np.concatenate([r[1] for r in rows]).astype(np.float32)
    else:
        indices = np.empty(0, dtype=np.uint32)
        values = np.empty(0, dtype=np.float32)
    return DocumentStore(dense=np.ascontiguousarray(dense, dtype=np.float32), indptr=indptr,
                         indices=indices, values=values, sparse_dim=sparse_dim)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    n, m, c = spec.dense_dim, spec.sparse_dim, spec.clusters
    kt = min(spec.topics_per_doc, c)
    centers = _unit_rows(rng.standard_normal((c, n)))
    vocab_ids, vocab_logw = _cluster_vocab(rng, spec, centers)

    nd = spec.doc_count
    topics = np.argsort(rng.random((nd, c)), axis=1)[:, :kt]
    weights = rng.dirichlet(np.full(kt, spec.mixing), size=nd)
    mix = np.einsum("dk,dkn->dn", weights, centers[topics])
    noise = rng.standard_normal((nd, n)) * (spec.cluster_spread / np.sqrt(n))
    dense = _unit_rows(_unit_rows(mix) + noise)
    nnzs = np.clip(rng.poisson(spec.avg_nnz, nd), 1, m)
    rows = [_sparse_row(rng, int(nnzs[i]), spec.rho, topics[i], weights[i], vocab_ids,
                        vocab_logw, m) for i in range(nd)]
    docs = _assemble(dense, rows, m)

    qn = spec.query_nnz or spec.avg_nnz
    target = rng.integers(0, nd, size=spec.query_count)
    qnoise = rng.standard_normal((spec.query_count, n)) * (spec.query_noise / np.sqrt(n))
    q_dense = _unit_rows(dense[target] + qnoise) if spec.query_count else np.empty((0, n))
    q_rows = []
    for q in range(spec.query_count):
        t = target[q]
        ti, tv = rows[t]
        keep = min(ti.size, int(round(qn * spec.query_keep)))
        sel = rng.choice(ti.size, size=keep, replace=False)
        forced = (ti[sel].astype(np.int64), tv[sel] * rng.lognormal(0.0, 0.25, keep))
        q_rows.append(_sparse_row(rng, qn, spec.rho, topics[t], weights[t], vocab_ids,
                                  vocab_logw, m, forced=forced))
    queries = _assemble(q_dense, q_rows, m)
    qrels = {q: {int(target[q]): 1} for q in range(spec.query_count)}
    return SyntheticData(docs, queries, qrels, topics.astype(np.int32), weights,
                         target.astype(np.int64))


def distance_correlation(store: DocumentStore, pairs: int = 20_000, seed: int = 0) -> float:
    """Pearson r between dense and sparse IP distances over random document pairs."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, store.count, pairs)
    b = rng.integers(0, store.count, pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    dd = 1.0 - np.einsum("ij,ij->i", store.dense64[a], store.dense64[b])
    csr = store.to_csr().astype(np.float64)
    sd = 1.0 - np.asarray(csr[a].multiply(csr[b]).sum(axis=1)).ravel()
    return float(np.corrcoef(dd, sd)[0, 1])
