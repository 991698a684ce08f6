import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_ann.alignment import AlignmentParams
from hybrid_ann.distance import (HybridVector, PruneConfig, SparseVector, dense_ip_distance,
                                 fuse_distances, hybrid_distance, keep_count, prune_sparse,
                                 sparse_ip_distance)
from hybrid_ann.errors import ConfigError, DimensionError


def sparse_vectors(max_dim=200, max_nnz=40):
    @st.composite
    def build(draw):
        idx = draw(st.lists(st.integers(0, max_dim - 1), max_size=max_nnz, unique=True))
        vals = draw(st.lists(st.floats(-4, 4, width=32).filter(lambda v: v != 0),
                             min_size=len(idx), max_size=len(idx)))
        return SparseVector.from_dict(dict(zip(idx, vals)))
    return build()


def densified_distance(a, b, dim):
    # float64 dot of the two densified vectors, summed in ascending coordinate order
    x = a.to_dense(dim).astype(np.float64)
    y = b.to_dense(dim).astype(np.float64)
    acc = 0.0
    for i in np.flatnonzero(x * y != 0):
        acc += x[i] * y[i]
    return float(np.float32(1.0 - acc))


class TestDense:
    def test_unit_self_distance(self):
        assert dense_ip_distance([0.6, 0.8], [0.6, 0.8]) == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal(self):
        assert dense_ip_distance([1, 0], [0, 1]) == 1.0

    def test_hand_dot(self):
        assert dense_ip_distance([0.5, 0.5], [0.2, 0.4]) == pytest.approx(0.7, abs=1e-7)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            dense_ip_distance([1.0, 0.0], [1.0, 0.0, 0.0])

    @given(st.lists(st.floats(-1, 1, width=32), min_size=1, max_size=64), st.data())
    def test_symmetric(self, a, data):
        b = data.draw(st.lists(st.floats(-1, 1, width=32), min_size=len(a), max_size=len(a)))
        assert dense_ip_distance(a, b) == dense_ip_distance(b, a)


class TestSparse:
    def test_single_match(self):
        a = SparseVector.from_dict({2: 1.0, 7: 2.0})
        b = SparseVector.from_dict({7: 1.5, 9: 3.0})
        assert sparse_ip_distance(a, b) == -2.0

    def test_empty_overlap(self):
        assert sparse_ip_distance(SparseVector.empty(), SparseVector.from_dict({5: 4.0})) == 1.0

    def test_random_50_nnz_pair(self, rng):
        dim = 30_000
        a, b = (SparseVector(np.sort(rng.choice(dim, 50, replace=False)),
                             rng.random(50).astype(np.float32)) for _ in range(2))
        # force some overlap
        b = SparseVector(np.union1d(b.indices, a.indices[:10]),
                         rng.random(np.union1d(b.indices, a.indices[:10]).size))
        assert sparse_ip_distance(a, b) == densified_distance(a, b, dim)

    @given(sparse_vectors(), sparse_vectors())
    def test_merge_equals_densified(self, a, b):
        assert sparse_ip_distance(a, b) == densified_distance(a, b, 200)

    @given(sparse_vectors(), sparse_vectors())
    def test_symmetric(self, a, b):
        assert sparse_ip_distance(a, b) == sparse_ip_distance(b, a)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            SparseVector(np.array([3, 1]), np.array([1.0, 1.0]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(DimensionError):
            SparseVector(np.array([1, 3]), np.array([1.0]))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            SparseVector(np.array([1]), np.array([np.nan]))


class TestHybrid:
    def test_arithmetic(self):
        assert fuse_distances(0.4, 0.1, 0.5, 2.0) == pytest.approx(0.3, abs=1e-7)

    @given(sparse_vectors(), sparse_vectors(),
           st.lists(st.floats(-1, 1, width=32), min_size=4, max_size=4),
           st.lists(st.floats(-1, 1, width=32), min_size=4, max_size=4),
           st.floats(0.01, 100))
    def test_weight_collapse(self, a, b, qa, qb, gamma):
        q, d = HybridVector(np.array(qa), a), HybridVector(np.array(qb), b)
        dense = AlignmentParams(1.0, gamma, 1.0)
        sparse = AlignmentParams(1.0, 1.0, 0.0)
        assert hybrid_distance(q, d, dense) == dense_ip_distance(q.dense, d.dense)
        assert hybrid_distance(q, d, sparse) == sparse_ip_distance(a, b)
        mixed = AlignmentParams(1.0, gamma, 0.5)
        assert hybrid_distance(q, d, mixed) == hybrid_distance(d, q, mixed)

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError):
            fuse_distances(0.1, 0.1, 1.5, 1.0)


class TestPrune:
    def test_top_two(self):
        v = SparseVector.from_dict({1: 0.1, 3: 0.9, 8: 0.05, 9: 0.5})
        assert prune_sparse(v, PruneConfig(0.5)).as_dict() == pytest.approx({3: 0.9, 9: 0.5})

    def test_zero_ratio_identity(self):
        v = SparseVector.from_dict({1: 0.1, 3: 0.9})
        assert prune_sparse(v, PruneConfig(0.0)) is v

    def test_ceiling(self):
        assert keep_count(153, 0.4) == 92
        assert keep_count(10, 0.95) == 1
        assert keep_count(0, 0.4) == 0

    def test_ratio_bounds(self):
        with pytest.raises(ConfigError):
            PruneConfig(1.0)
        with pytest.raises(ConfigError):
            PruneConfig(-0.1)

    @given(sparse_vectors(max_nnz=60), st.floats(0, 0.99))
    def test_subset_and_order(self, v, ratio):
        out = prune_sparse(v, PruneConfig(ratio))
        kept, full = out.as_dict(), v.as_dict()
        assert out.nnz == keep_count(v.nnz, ratio)
        assert all(full[i] == x for i, x in kept.items())
        assert np.all(np.diff(out.indices.astype(np.int64)) > 0)
        dropped = [i for i in full if i not in kept]
        if kept and dropped:
            lo = min(abs(x) for x in kept.values())
            assert lo >= max(abs(full[i]) for i in dropped)
            # equal magnitudes: the lower coordinate survives
            for i in dropped:
                for j, x in kept.items():
                    if abs(x) == abs(full[i]):
                        assert j < i

    def test_tie_keeps_lower_index(self):
        v = SparseVector.from_dict({4: 1.0, 2: 1.0, 9: 1.0, 7: 5.0})
        assert sorted(prune_sparse(v, PruneConfig(0.5)).as_dict()) == [2, 7]
