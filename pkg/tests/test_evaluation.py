import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_ann.alignment import AlignmentParams, normalize_queries
from hybrid_ann.distance import HybridVector, SparseVector, dense_ip_distance, hybrid_distance
from hybrid_ann.evaluation import (brute_force, brute_force_topk, evaluate, mrr_at_10,
                                   ndcg_at_10, recall_at_k)
from hybrid_ann.store import DocumentStore


def three_doc_store():
    # query (1, 0) with sparse {0: 1}; alpha=0.5, gamma=1
    docs = [
        HybridVector([0.4, 0.0], SparseVector.from_dict({0: 1.0})),    # 0.5*0.6 + 0.5*0.0 = 0.3
        HybridVector([1.0, 0.0], SparseVector.from_dict({0: 1.2})),    # 0.5*0.0 + 0.5*-0.2 = -0.1
        HybridVector([0.6, 0.0], SparseVector.from_dict({1: 1.0})),    # 0.5*0.4 + 0.5*1.0 = 0.7
    ]
    store = DocumentStore.from_vectors(docs, 4)
    store = store.with_sparse_values(store.values, normalized=True)
    q = HybridVector([1.0, 0.0], SparseVector.from_dict({0: 1.0}))
    return store, q, AlignmentParams(1.0, 1.0, 0.5)


class TestBruteForce:
    def test_hand_computed(self):
        store, q, params = three_doc_store()
        gt = brute_force_topk(store, q, params, 2)
        assert gt.ids[0].tolist() == [1, 0]
        np.testing.assert_allclose(gt.distances[0], [-0.1, 0.3], atol=1e-6)

    def test_full_permutation(self):
        store, q, params = three_doc_store()
        gt = brute_force_topk(store, q, params, 3)
        assert gt.ids[0].tolist() == [1, 0, 2]

    def test_alpha_one_is_dense(self, small_docs, small_data, small_params):
        q = small_data.queries.subset(range(20))
        hyb = brute_force(small_docs, q, small_params.with_alpha(1.0), 10)
        dense = brute_force(small_docs, q, None, 10, dense_only=True)
        np.testing.assert_array_equal(hyb.ids, dense.ids)
        np.testing.assert_array_equal(hyb.distances, dense.distances)

    def test_matches_python_scan(self, small_docs, small_data, small_params):
        queries = normalize_queries(small_data.queries.subset(range(5)), small_params)
        gt = brute_force(small_docs, queries, small_params, 10)
        for i in range(5):
            d = [hybrid_distance(queries[i], small_docs[j], small_params)
                 for j in range(small_docs.count)]
            order = sorted(range(len(d)), key=lambda j: (d[j], j))[:10]
            assert gt.ids[i].tolist() == order
            np.testing.assert_array_equal(gt.distances[i], np.float32([d[j] for j in order]))

    def test_rows_sorted(self, small_docs, small_data, small_params):
        gt = brute_force(small_docs, small_data.queries, small_params, 10)
        assert gt.k == 10 and len(gt) == small_data.queries.count
        for ids, dist in zip(gt.ids, gt.distances):
            pairs = list(zip(dist.tolist(), ids.tolist()))
            assert pairs == sorted(pairs)

    def test_ties_by_id(self):
        docs = [HybridVector([1.0, 0.0], SparseVector.empty()) for _ in range(4)]
        store = DocumentStore.from_vectors(docs, 2)
        q = HybridVector([1.0, 0.0], SparseVector.empty())
        assert brute_force_topk(store, q, None, 3, dense_only=True).ids[0].tolist() == [0, 1, 2]
        assert dense_ip_distance(store[0].dense, q.dense) == 0.0


class TestMetrics:
    def test_recall_examples(self):
        truth = list(range(10))
        assert recall_at_k(list(range(9)) + [99], truth, 10) == pytest.approx(0.9)
        assert recall_at_k(truth, truth, 10) == 1.0
        assert recall_at_k(list(range(10, 20)), truth, 10) == 0.0

    def test_recall_length_error(self):
        with pytest.raises(ValueError):
            recall_at_k([1, 2], [1, 2, 3], 3)

    def test_rank_one(self):
        assert ndcg_at_10([7, 1, 2], {7: 1}) == 1.0
        assert mrr_at_10([7, 1, 2], {7: 1}) == 1.0

    def test_rank_two(self):
        assert mrr_at_10([1, 7, 2], {7: 1}) == 0.5
        assert ndcg_at_10([1, 7, 2], {7: 1}) == pytest.approx(1 / np.log2(3))

    def test_miss(self):
        retrieved = list(range(100, 110)) + [7]
        assert ndcg_at_10(retrieved, {7: 1}) == 0.0
        assert mrr_at_10(retrieved, {7: 1}) == 0.0

    def test_graded(self):
        # gains 2^rel - 1: ideal order (3, 1) -> 7 + 1/log2(3)
        got = ndcg_at_10([5, 4], {4: 3, 5: 1})
        assert got == pytest.approx((1 + 7 / np.log2(3)) / (7 + 1 / np.log2(3)))

    def test_empty_qrels_row(self, caplog):
        assert ndcg_at_10([1, 2], {}) == 0.0
        assert mrr_at_10([1, 2], {}) == 0.0
        assert "empty qrels" in caplog.text

    @given(st.lists(st.integers(0, 30), min_size=10, max_size=10, unique=True),
           st.lists(st.integers(0, 30), min_size=10, max_size=10, unique=True),
           st.randoms())
    def test_recall_order_invariant(self, a, b, rnd):
        shuffled = list(a)
        rnd.shuffle(shuffled)
        assert recall_at_k(a, b, 10) == recall_at_k(shuffled, b, 10)
        assert 0.0 <= recall_at_k(a, b, 10) <= 1.0

    @given(st.lists(st.integers(0, 30), min_size=1, max_size=15, unique=True),
           st.dictionaries(st.integers(0, 30), st.integers(0, 3), min_size=1, max_size=8))
    def test_bounds(self, retrieved, row):
        for f in (ndcg_at_10, mrr_at_10):
            assert 0.0 <= f(retrieved, row) <= 1.0 + 1e-12

    def test_evaluate_keys(self, small_docs, small_data, small_params):
        gt = brute_force(small_docs, small_data.queries, small_params, 10)
        out = evaluate(gt.ids, gt, small_data.qrels)
        assert set(out) == {"recall10", "ndcg10", "mrr10"}
        assert out["recall10"] == 1.0
        assert 0.0 < out["mrr10"] <= 1.0
