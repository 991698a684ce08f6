"""Columnar storage of hybrid vectors: a dense matrix plus a CSR sparse triple."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from hybrid_ann.distance import HybridVector, PruneConfig, SparseVector, prune_mask
from hybrid_ann.errors import DimensionError, StateError


@dataclass(frozen=True, eq=False)
class DocumentStore:
    """Hybrid vectors in CSR form. Also used for query sets.

    ``normalized`` records that sparse values were divided by
    ``norm_denominator`` (see :func:`hybrid_ann.alignment.normalize_store`).
    """

    dense: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    sparse_dim: int
    normalized: bool = False
    norm_denominator: float = 1.0
    prune_ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dense", np.ascontiguousarray(self.dense, dtype=np.float32))
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.uint32))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float32))
        self.validate()

    def validate(self) -> None:
        if self.dense.ndim != 2:
            raise DimensionError("dense block must be 2-D (count, dim)")
        n = self.dense.shape[0]
        ip = self.indptr
        if ip.shape != (n + 1,):
            raise DimensionError(f"indptr must have count+1={n + 1} entries, got {ip.shape[0]}")
        if ip[0] != 0 or np.any(np.diff(ip) < 0):
            raise ValueError("indptr must start at 0 and be non-decreasing")
        if ip[-1] != self.indices.size or self.indices.size != self.values.size:
            raise ValueError("indptr[count] must equal the number of stored non-zeros")
        if self.indices.size:
            if int(self.indices.max()) >= self.sparse_dim:
                raise ValueError("sparse index out of range for sparse_dim")
            inc = np.diff(self.indices.astype(np.int64))
            row_start = np.zeros(self.indices.size, dtype=bool)
            row_start[ip[1:-1][ip[1:-1] < self.indices.size]] = True
            if np.any((inc <= 0) & ~row_start[1:]):
                raise ValueError("sparse indices must be strictly increasing within each row")
        if not (np.all(np.isfinite(self.dense)) and np.all(np.isfinite(self.values))):
            raise ValueError("store contains non-finite values")

    # ------------------------------------------------------------ shape

    @property
    def count(self) -> int:
        return int(self.dense.shape[0])

    def __len__(self) -> int:
        return self.count

    @property
    def dense_dim(self) -> int:
        return int(self.dense.shape[1])

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @cached_property
    def dense64(self) -> np.ndarray:
        # the compiled kernels read float64 rows (exact copies of the float32 data)
        return self.dense.astype(np.float64)

    def kernel_arrays(self):
        return (self.dense64, self.indptr, self.indices, self.values)

    # ------------------------------------------------------------ rows

    def sparse_row(self, i: int) -> SparseVector:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseVector(self.indices[lo:hi], self.values[lo:hi])

    def __getitem__(self, i: int) -> HybridVector:
        return HybridVector(self.dense[i], self.sparse_row(i))

    def sparse_norms(self) -> np.ndarray:
        sq = self.values.astype(np.float64) ** 2
        sums = np.add.reduceat(sq, self.indptr[:-1]) if sq.size else np.zeros(self.count)
        sums[np.diff(self.indptr) == 0] = 0.0
        return np.sqrt(sums)

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.indices.astype(np.int64), self.indptr),
                             shape=(self.count, self.sparse_dim))

    # ------------------------------------------------------------ constructors

    @classmethod
    def from_vectors(cls, vectors: Iterable[HybridVector], sparse_dim: int,
                     dense_dim: int | None = None) -> "DocumentStore":
        vectors = list(vectors)
        if not vectors:
            if dense_dim is None:
                raise DimensionError("dense_dim is required for an empty store")
            return cls.empty(dense_dim, sparse_dim)
        dims = {v.dense.shape[0] for v in vectors}
        if len(dims) != 1:
            raise DimensionError(f"mixed dense dimensions: {sorted(dims)}")
        lengths = [v.sparse.nnz for v in vectors]
        indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(lengths)
        return cls(
            dense=np.stack([v.dense for v in vectors]),
            indptr=indptr,
            indices=np.concatenate([v.sparse.indices for v in vectors]),
            values=np.concatenate([v.sparse.values for v in vectors]),
            sparse_dim=sparse_dim,
        )

    @classmethod
    def empty(cls, dense_dim: int, sparse_dim: int) -> "DocumentStore":
        return cls(np.zeros((0, dense_dim), np.float32), np.zeros(1, np.int64),
                   np.zeros(0, np.uint32), np.zeros(0, np.float32), sparse_dim)

    def subset(self, ids: Sequence[int]) -> "DocumentStore":
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.diff(self.indptr)[ids]
        indptr = np.zeros(ids.size + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(lengths)
        take = np.concatenate([np.arange(self.indptr[i], self.indptr[i + 1]) for i in ids]) \
            if ids.size else np.zeros(0, np.int64)
        return replace(self, dense=self.dense[ids], indptr=indptr,
                       indices=self.indices[take], values=self.values[take])

    def with_sparse_values(self, values: np.ndarray, **changes) -> "DocumentStore":
        return replace(self, values=values, **changes)

    def scaled_sparse(self, factor: float) -> "DocumentStore":
        if self.normalized:
            raise StateError("scale the raw corpus, not a normalized one")
        return replace(self, values=(self.values * np.float32(factor)).astype(np.float32))

    def pruned(self, cfg: PruneConfig) -> "DocumentStore":
        """Drop the smallest-magnitude ``cfg.ratio`` of every row's non-zeros."""
        if cfg.ratio == 0.0:
            return self
        keep = np.zeros(self.nnz, dtype=bool)
        for i in range(self.count):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            keep[lo:hi] = prune_mask(self.values[lo:hi], cfg.ratio)
        counts = np.add.reduceat(keep.astype(np.int64), self.indptr[:-1]) if self.nnz else \
            np.zeros(self.count, np.int64)
        counts[np.diff(self.indptr) == 0] = 0
        indptr = np.zeros(self.count + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(counts)
        return replace(self, indptr=indptr, indices=self.indices[keep],
                       values=self.values[keep], prune_ratio=cfg.ratio)
