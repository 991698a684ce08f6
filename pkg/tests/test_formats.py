import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_ann.alignment import AlignmentParams
from hybrid_ann.distance import HybridVector, SparseVector
from hybrid_ann.errors import FormatError
from hybrid_ann.evaluation import GroundTruth
from hybrid_ann.formats import (load_calibration, load_dense, load_groundtruth, load_index,
                                load_qrels, load_sparse, load_store, save_calibration, save_dense,
                                save_groundtruth, save_index, save_qrels, save_sparse, save_store)
from hybrid_ann.search import SearchConfig, search_batch
from hybrid_ann.store import DocumentStore


def two_doc_bytes():
    # doc 0: {2: 0.5, 7: 1.0}, doc 1: {} , dim 10
    return (b"HSV1" + struct.pack("<IIQ", 2, 10, 2) + struct.pack("<3Q", 0, 2, 2)
            + struct.pack("<2I", 2, 7) + struct.pack("<2f", 0.5, 1.0))


def random_store(rng, count, dense_dim=6, sparse_dim=50):
    vecs = []
    for _ in range(count):
        nnz = int(rng.integers(0, 8))
        idx = rng.choice(sparse_dim, nnz, replace=False)
        vecs.append(HybridVector(rng.standard_normal(dense_dim),
                                 SparseVector.from_dict(dict(zip(idx.tolist(),
                                                                 rng.standard_normal(nnz))))))
    return DocumentStore.from_vectors(vecs, sparse_dim)


class TestSparse:
    def test_hand_assembled(self, tmp_path):
        p = tmp_path / "two.hsv"
        p.write_bytes(two_doc_bytes())
        count, dim, indptr, indices, values = load_sparse(p)
        assert (count, dim) == (2, 10)
        assert indptr.tolist() == [0, 2, 2]
        assert indices.tolist() == [2, 7] and values.tolist() == [0.5, 1.0]

    def test_save_reproduces_hand_bytes(self, tmp_path):
        p = tmp_path / "two.hsv"
        p.write_bytes(two_doc_bytes())
        count, dim, indptr, indices, values = load_sparse(p)
        store = DocumentStore(np.zeros((2, 1), np.float32), indptr, indices, values, sparse_dim=dim)
        save_sparse(tmp_path / "again.hsv", store)
        assert (tmp_path / "again.hsv").read_bytes() == two_doc_bytes()

    def test_all_empty(self, tmp_path):
        store = DocumentStore.from_vectors([HybridVector([1.0], SparseVector.empty())] * 3, 5)
        save_sparse(tmp_path / "e.hsv", store)
        count, _, indptr, indices, _ = load_sparse(tmp_path / "e.hsv")
        assert count == 3 and indptr.tolist() == [0, 0, 0, 0] and indices.size == 0

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.hsv"
        p.write_bytes(b"XXXX" + two_doc_bytes()[4:])
        with pytest.raises(FormatError) as err:
            load_sparse(p)
        assert err.value.offset == 0 and "magic" in str(err.value)

    @pytest.mark.parametrize("cut", [3, 10, 30, 50, 55])
    def test_truncated(self, tmp_path, cut):
        p = tmp_path / "t.hsv"
        p.write_bytes(two_doc_bytes()[:cut])
        with pytest.raises(FormatError, match="truncated") as err:
            load_sparse(p)
        assert err.value.offset is not None and err.value.offset <= cut

    def test_index_out_of_range(self, tmp_path):
        raw = bytearray(two_doc_bytes())
        struct.pack_into("<I", raw, 44, 10)
        p = tmp_path / "o.hsv"
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match=">= dim") as err:
            load_sparse(p)
        assert err.value.offset == 44

    def test_unsorted_row(self, tmp_path):
        raw = bytearray(two_doc_bytes())
        struct.pack_into("<2I", raw, 44, 7, 2)
        p = tmp_path / "u.hsv"
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="increasing") as err:
            load_sparse(p)
        assert err.value.offset == 48

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "x.hsv"
        p.write_bytes(two_doc_bytes() + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            load_sparse(p)


class TestRoundTrip:
    def test_thousand_vectors_byte_identical(self, tmp_path):
        store = random_store(np.random.default_rng(5), 1000)
        save_store(tmp_path / "a.hdv", tmp_path / "a.hsv", store)
        back = load_store(tmp_path / "a.hdv", tmp_path / "a.hsv")
        np.testing.assert_array_equal(back.dense, store.dense)
        np.testing.assert_array_equal(back.indices, store.indices)
        np.testing.assert_array_equal(back.values, store.values)
        save_store(tmp_path / "b.hdv", tmp_path / "b.hsv", back)
        for ext in ("hdv", "hsv"):
            assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()

    @given(st.integers(0, 1000), st.integers(1, 20))
    def test_store_property(self, tmp_path_factory, seed, count):
        d = tmp_path_factory.mktemp("rt")
        store = random_store(np.random.default_rng(seed), count)
        save_store(d / "s.hdv", d / "s.hsv", store)
        back = load_store(d / "s.hdv", d / "s.hsv")
        for i in range(count):
            assert back[i].sparse.as_dict() == store[i].sparse.as_dict()

    def test_dense(self, tmp_path):
        x = np.arange(12, dtype=np.float32).reshape(3, 4)
        save_dense(tmp_path / "d.hdv", x)
        np.testing.assert_array_equal(load_dense(tmp_path / "d.hdv"), x)
        assert (tmp_path / "d.hdv").stat().st_size == 12 + 4 * 12

    def test_row_mismatch(self, tmp_path):
        store = random_store(np.random.default_rng(0), 4)
        save_dense(tmp_path / "d.hdv", store.dense[:3])
        save_sparse(tmp_path / "s.hsv", store)
        with pytest.raises(FormatError, match="rows"):
            load_store(tmp_path / "d.hdv", tmp_path / "s.hsv")

    def test_groundtruth_missing_slots(self, tmp_path):
        gt = GroundTruth(np.array([[3, 1, -1]]), np.array([[0.1, 0.2, np.inf]], np.float32))
        save_groundtruth(tmp_path / "g.hgt", gt)
        back = load_groundtruth(tmp_path / "g.hgt")
        assert back.ids.tolist() == [[3, 1, -1]]
        assert np.isinf(back.distances[0, 2])

    def test_qrels(self, tmp_path):
        qrels = {0: {5: 1, 2: 3}, 4: {1: 0}}
        save_qrels(tmp_path / "q.tsv", qrels)
        assert (tmp_path / "q.tsv").read_text() == "0\t2\t3\n0\t5\t1\n4\t1\t0\n"
        assert load_qrels(tmp_path / "q.tsv") == qrels

    def test_qrels_bad_line(self, tmp_path):
        (tmp_path / "q.tsv").write_text("0\t1\t1\nbroken\n")
        with pytest.raises(FormatError) as err:
            load_qrels(tmp_path / "q.tsv")
        assert err.value.offset == 6

    def test_calibration(self, tmp_path):
        params = AlignmentParams(3.5, 2.25, 0.3, seed=4)
        save_calibration(tmp_path / "c.json", params, {"note": 1})
        assert load_calibration(tmp_path / "c.json") == params
        (tmp_path / "bad.json").write_text("{}")
        with pytest.raises(FormatError):
            load_calibration(tmp_path / "bad.json")


class TestIndex:
    def test_search_identical_after_reload(self, tmp_path, small_graph, small_data):
        save_index(tmp_path / "g.hix", small_graph)
        back = load_index(tmp_path / "g.hix")
        cfg = SearchConfig(sef=32, tau_dense=0.9, tau_hybrid=0.9)
        a = search_batch(small_graph, small_data.queries, cfg)
        b = search_batch(back, small_data.queries, cfg)
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.distances, b.distances)
        np.testing.assert_array_equal(a.counters, b.counters)
        assert back.params == small_graph.params
        assert back.build_stage is small_graph.build_stage

    def test_resave_byte_identical(self, tmp_path, small_dense_graph):
        save_index(tmp_path / "a.hix", small_dense_graph)
        save_index(tmp_path / "b.hix", load_index(tmp_path / "a.hix"))
        assert (tmp_path / "a.hix").read_bytes() == (tmp_path / "b.hix").read_bytes()

    def test_corrupt(self, tmp_path, small_graph):
        save_index(tmp_path / "g.hix", small_graph)
        raw = (tmp_path / "g.hix").read_bytes()
        (tmp_path / "t.hix").write_bytes(raw[:-3])
        with pytest.raises(FormatError):
            load_index(tmp_path / "t.hix")
        (tmp_path / "m.hix").write_bytes(b"HIX2" + raw[4:])
        with pytest.raises(FormatError, match="magic"):
            load_index(tmp_path / "m.hix")
