"""Hybrid vector types, inner-product distances and sparse pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hybrid_ann import _kernels
from hybrid_ann.errors import ConfigError, DimensionError


@dataclass(frozen=True)
class SparseVector:
    """Sorted (index, value) pairs of a high-dimensional sparse embedding."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.uint32)
        val = np.ascontiguousarray(self.values, dtype=np.float32)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise DimensionError("indices and values must be 1-D arrays of equal length")
        if idx.size > 1 and not np.all(idx[1:] > idx[:-1]):
            raise ValueError("sparse indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise ValueError("sparse values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dict(cls, entries: dict[int, float]) -> "SparseVector":
        keys = sorted(entries)
        return cls(np.array(keys, dtype=np.uint32),
                   np.array([entries[k] for k in keys], dtype=np.float32))

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls(np.empty(0, np.uint32), np.empty(0, np.float32))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values.astype(np.float64) ** 2)))

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim, dtype=np.float32)
        out[self.indices] = self.values
        return out

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}


@dataclass(frozen=True)
class HybridVector:
    dense: np.ndarray
    sparse: SparseVector

    def __post_init__(self):
        d = np.ascontiguousarray(self.dense, dtype=np.float32)
        if d.ndim != 1:
            raise DimensionError("dense half must be 1-D")
        if not np.all(np.isfinite(d)):
            raise ValueError("dense values must be finite")
        object.__setattr__(self, "dense", d)


@dataclass(frozen=True)
class PruneConfig:
    """Fraction of each sparse vector's non-zeros to drop (smallest magnitude first)."""

    ratio: float = 0.0
    prune_queries: bool = False

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError(f"prune ratio must lie in [0, 1), got {self.ratio}")


def dense_ip_distance(a, b) -> float:
    """``1 - <a, b>`` for two dense vectors."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"dense length mismatch: {a.shape} vs {b.shape}")
    return float(_kernels.dense_distance(a.astype(np.float64), b.astype(np.float64)))


def sparse_ip_distance(a: SparseVector, b: SparseVector) -> float:
    """``1 - <a, b>`` via a two-pointer merge of the sorted index lists.

    Negative results are legitimate: un-normalized sparse inner products exceed 1.
    """
    return float(_kernels.sparse_distance(a.indices, a.values, b.indices, b.values))


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")


def fuse_distances(dense_dist: float, sparse_dist: float, alpha: float, gamma: float) -> float:
    _check_alpha(alpha)
    return float(_kernels.fuse(float(dense_dist), float(sparse_dist), float(alpha), float(gamma)))


def hybrid_distance(q: HybridVector, d: HybridVector, params) -> float:
    """``alpha * dense + (1 - alpha) * gamma * sparse`` on already-normalized halves.

    ``params`` is anything with ``alpha`` and ``gamma`` attributes
    (normally :class:`hybrid_ann.alignment.AlignmentParams`).
    """
    _check_alpha(params.alpha)
    return fuse_distances(dense_ip_distance(q.dense, d.dense),
                          sparse_ip_distance(q.sparse, d.sparse),
                          params.alpha, params.gamma)


def keep_count(nnz: int, ratio: float) -> int:
    # round away float noise before the ceiling: 0.6 * 153 must give 92, not 93
    return min(nnz, math.ceil(round((1.0 - ratio) * nnz, 9)))


def prune_mask(values: np.ndarray, ratio: float) -> np.ndarray:
    """Boolean mask of the entries kept by magnitude pruning.

    Larger magnitudes win; among equal magnitudes the lower position (which is
    the lower coordinate for index-sorted input) is kept.
    """
    nnz = values.size
    keep = keep_count(nnz, ratio)
    mask = np.zeros(nnz, dtype=bool)
    if keep == nnz:
        mask[:] = True
        return mask
    order = np.lexsort((np.arange(nnz), -np.abs(values.astype(np.float64))))
    mask[order[:keep]] = True
    return mask


def prune_sparse(v: SparseVector, cfg: PruneConfig) -> SparseVector:
    if cfg.ratio == 0.0:
        return v
    mask = prune_mask(v.values, cfg.ratio)
    return SparseVector(v.indices[mask], v.values[mask])
