import heapq

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_ann._kernels import SPARSE_CALLS, dense_distance, sparse_distance
from hybrid_ann.alignment import AlignmentParams, normalize_store
from hybrid_ann.distance import HybridVector, SparseVector, dense_ip_distance
from hybrid_ann.errors import BuildError, ConfigError, StateError
from hybrid_ann.evaluation import brute_force, mean_recall
from hybrid_ann.graph import (BuildConfig, BuildStage, HybridGraph, assign_levels, build_dense_stage,
                              build_index, heuristic_select, heuristic_select_store,
                              refine_hybrid_stage)
from hybrid_ann.search import SearchConfig, search_batch
from hybrid_ann.store import DocumentStore
from hybrid_ann.synthetic import SyntheticSpec, generate_synthetic

from conftest import SMALL_BUILD


def node_distance(store, alpha, gamma):
    def dist(a, b):
        dd = dense_distance(store.dense[a], store.dense[b])
        if alpha == 1.0:
            return dd
        sa, sb = store.sparse_row(a), store.sparse_row(b)
        sd = sparse_distance(sa.indices, sa.values, sb.indices, sb.values)
        return float(np.float32(alpha * dd + (1.0 - alpha) * gamma * sd))
    return dist


def reference_refine(graph, dist, ef, limit):
    """Per-node best-first search over the frozen layer 0, heuristic selection,
    then reverse links with re-pruning, all in plain Python."""
    n, cap = graph.count, 2 * graph.m
    frozen = [graph.neighbors(d).tolist() for d in range(n)]
    planned = []
    for d in range(n):
        visited = {d}
        C, W = [(-np.inf, d)], []
        while C:
            cd, c = C[0]
            if len(W) >= ef and (-W[0][0], -W[0][1]) < (cd, c):
                break
            heapq.heappop(C)
            for nb in frozen[c]:
                if nb in visited:
                    continue
                visited.add(nb)
                x = dist(d, nb)
                if len(W) < ef or (x, nb) < (-W[0][0], -W[0][1]):
                    heapq.heappush(C, (x, nb))
                    heapq.heappush(W, (-x, -nb))
                    if len(W) > ef:
                        heapq.heappop(W)
        cands = sorted((-x, -i) for x, i in W)
        planned.append(heuristic_select([(i, x) for x, i in cands], limit, dist))
    adj = [list(p) for p in planned]
    for d in range(n):
        for s in planned[d]:
            if d in adj[s]:
                continue
            if len(adj[s]) < cap:
                adj[s].append(d)
            else:
                cands = sorted((dist(s, x), x) for x in adj[s] + [d])
                adj[s] = heuristic_select([(x, y) for y, x in cands], cap, lambda a, b: dist(a, b))
    return adj


def upper_snapshot(g):
    return [(int(v), lvl, g.neighbors(int(v), lvl).tolist())
            for lvl in range(1, g.max_level + 1) for v in g.layer_nodes(lvl)]


class TestConfig:
    def test_defaults(self):
        cfg = BuildConfig()
        assert (cfg.m, cfg.cef_dense, cfg.cef_hybrid) == (32, 200, 32)
        assert cfg.level_lambda == pytest.approx(1 / np.log(32))

    @pytest.mark.parametrize("kw", [dict(m=1), dict(m=8, cef_dense=4), dict(cef_hybrid=0),
                                    dict(threads=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            BuildConfig(**kw)

    def test_levels_seeded(self):
        a = assign_levels(1000, 1 / np.log(16), 4)
        np.testing.assert_array_equal(a, assign_levels(1000, 1 / np.log(16), 4))
        assert a.min() == 0 and a.max() >= 1


class TestDenseStage:
    def test_single_node(self):
        store = DocumentStore.from_vectors([HybridVector([1.0, 0.0], SparseVector.empty())], 4)
        g = build_dense_stage(store, BuildConfig(m=4, cef_dense=8))
        assert g.count == 1 and g.entry_point == 0
        assert g.neighbors(0).size == 0
        g.audit()

    def test_empty_store(self):
        with pytest.raises(BuildError):
            build_dense_stage(DocumentStore.empty(4, 10))

    def test_greedy_reaches_nearest(self, rng):
        centers = rng.standard_normal((5, 16))
        pts = centers[rng.integers(0, 5, 300)] + 0.3 * rng.standard_normal((300, 16))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        empty = SparseVector.empty()
        store = DocumentStore.from_vectors([HybridVector(p, empty) for p in pts[:100]], 8)
        queries = DocumentStore.from_vectors([HybridVector(p, empty) for p in pts[100:]], 8)
        g = build_dense_stage(store, BuildConfig(m=8, cef_dense=100))
        got = search_batch(g, queries, SearchConfig(k=1, sef=1, mode="dense_only")).ids[:, 0]
        truth = brute_force(store, queries, None, 1, dense_only=True).ids[:, 0]
        assert np.mean(got == truth) >= 0.95

    def test_invariants_and_purity(self, small_dense_graph):
        g = small_dense_graph
        g.audit()
        assert g.build_stage is BuildStage.DENSE_BUILT
        assert g.stats.dense_stage_counters[SPARSE_CALLS] == 0
        assert int(g.deg0.max()) <= 2 * g.m

    def test_deterministic(self, small_docs, small_params, small_dense_graph):
        again = build_index(small_docs, small_params, SMALL_BUILD, "dense-only")
        for a, b in zip(small_dense_graph.arrays, again.arrays):
            np.testing.assert_array_equal(a, b)
        assert again.entry_point == small_dense_graph.entry_point

    def test_threads_keep_invariants(self, small_docs, small_params):
        from dataclasses import replace
        g = build_index(small_docs, small_params, replace(SMALL_BUILD, threads=2, batch_size=64))
        g.audit()


class TestRefine:
    def test_two_points(self):
        vecs = [HybridVector([1.0, 0.0], SparseVector.from_dict({1: 1.0})),
                HybridVector([0.0, 1.0], SparseVector.from_dict({1: 0.5}))]
        store = normalize_store(DocumentStore.from_vectors(vecs, 4), 1.0)
        g = build_index(store, AlignmentParams(1.0, 1.0), BuildConfig(m=2, cef_dense=2))
        assert g.neighbors(0).tolist() == [1] and g.neighbors(1).tolist() == [0]

    def test_upper_layers_untouched(self, small_docs, small_params):
        g = build_dense_stage(small_docs, SMALL_BUILD, small_params)
        before = upper_snapshot(g)
        refine_hybrid_stage(g, SMALL_BUILD)
        assert upper_snapshot(g) == before
        assert g.build_stage is BuildStage.HYBRID_REFINED
        g.audit()

    def test_refine_twice(self, small_graph):
        with pytest.raises(StateError):
            refine_hybrid_stage(small_graph.copy(), SMALL_BUILD)

    def test_needs_params(self, small_docs):
        g = build_dense_stage(small_docs, SMALL_BUILD)
        with pytest.raises(StateError):
            refine_hybrid_stage(g, SMALL_BUILD)

    @pytest.mark.parametrize("alpha", [None, 1.0])
    def test_matches_python_reference(self, small_docs, small_params, alpha):
        docs = small_docs.subset(range(250))
        cfg = BuildConfig(m=6, cef_dense=24, cef_hybrid=12, seed=1)
        g = build_dense_stage(docs, cfg, small_params)
        a = small_params.alpha if alpha is None else alpha
        # alpha = 1 must reproduce a refinement driven by the dense distance alone
        expected = reference_refine(g.copy(), node_distance(docs, a, small_params.gamma),
                                    cfg.cef_hybrid, cfg.refine_limit)
        refine_hybrid_stage(g, cfg, alpha=alpha)
        assert [g.neighbors(d).tolist() for d in range(g.count)] == expected

    def test_strict_m(self, small_docs, small_params):
        from dataclasses import replace
        cfg = replace(SMALL_BUILD, strict_m=True)
        g = refine_hybrid_stage(build_dense_stage(small_docs, cfg, small_params), cfg)
        g.audit()
        assert cfg.refine_limit == cfg.m

    @pytest.mark.xfail(strict=True, reason="near-kNN refined lists lose some navigability; "
                       "recall trails the dense graph by about 0.01 at equal sef")
    def test_refined_recall_not_worse(self):
        data = generate_synthetic(SyntheticSpec(doc_count=10_000, query_count=200, seed=21))
        from hybrid_ann.alignment import SamplePlan, calibrate
        cal = calibrate(data.docs, data.queries, SamplePlan(0.1, 0.05, 0))
        cfg = BuildConfig(m=16, cef_dense=100, cef_hybrid=32)
        dense = build_dense_stage(cal.docs, cfg, cal.params)
        refined = refine_hybrid_stage(dense.copy(), cfg)
        truth = brute_force(cal.docs, data.queries, cal.params, 10)
        for sef in (16, 32, 64):
            sc = SearchConfig(k=10, sef=sef, mode="naive_hybrid")
            r_dense = mean_recall(search_batch(dense, data.queries, sc).ids, truth.ids, 10)
            r_ref = mean_recall(search_batch(refined, data.queries, sc).ids, truth.ids, 10)
            assert r_ref >= r_dense, (sef, r_ref, r_dense)


class TestHeuristic:
    @staticmethod
    def euclid(points):
        return lambda a, b: float(np.linalg.norm(points[a] - points[b]))

    def test_hand_instance(self):
        pts = {1: np.array([1.0, 0.0]), 2: np.array([1.1, 0.0]), 3: np.array([0.0, 2.0])}
        cands = [(1, 1.0), (2, 1.1), (3, 2.0)]
        dist = self.euclid(pts)
        # 2 is nearer to 1 (0.1) than to the base (1.1): rejected, used only as backfill
        assert heuristic_select(cands, 2, dist) == [1, 3]
        assert heuristic_select(cands, 3, dist) == [1, 3, 2]

    def test_far_apart_takes_nearest(self):
        # right angles: every pair is sqrt(2) radii apart, so nothing is rejected
        angles = np.linspace(0, 2 * np.pi, 4, endpoint=False)
        pts = {i: (1 + 0.01 * i) * np.array([np.cos(a), np.sin(a)]) for i, a in enumerate(angles)}
        cands = [(i, float(np.linalg.norm(p))) for i, p in pts.items()]
        assert heuristic_select(cands, 3, self.euclid(pts)) == [0, 1, 2]

    def test_duplicate_rejected(self):
        pts = {1: np.array([1.0, 0.0]), 2: np.array([1.0, 0.0]), 3: np.array([-1.0, 0.5])}
        cands = [(1, 1.0), (2, 1.0), (3, float(np.hypot(1, 0.5)))]
        assert heuristic_select(cands, 2, self.euclid(pts)) == [1, 3]

    @given(st.integers(0, 10_000))
    def test_compiled_matches_reference(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((21, 2)).astype(np.float32)
        store = DocumentStore.from_vectors([HybridVector(p, SparseVector.empty()) for p in pts], 4)
        d = {i: dense_ip_distance(pts[0], pts[i]) for i in range(1, 21)}
        cands = sorted(d.items(), key=lambda t: (t[1], t[0]))
        expected = heuristic_select(cands, 5, lambda a, b: dense_ip_distance(pts[a], pts[b]))
        assert heuristic_select_store(store, 0, list(range(1, 21)), 5) == expected


def test_naive_hybrid_graph(small_naive_graph):
    g = small_naive_graph
    g.audit()
    assert g.build_stage is BuildStage.NAIVE_HYBRID
    assert g.stats.dense_stage_counters[SPARSE_CALLS] > 0


def test_refined_graph_invariants(small_graph):
    small_graph.audit()
    st_ = small_graph.stats.as_dict()
    assert st_["stage1_sparse_calls"] == 0 and st_["stage2_sparse_calls"] > 0


def test_build_mode_errors(small_docs):
    with pytest.raises(ConfigError):
        build_index(small_docs, None, SMALL_BUILD, "bogus")
    with pytest.raises(StateError):
        build_index(small_docs, None, SMALL_BUILD, "two-stage")
    assert isinstance(build_index(small_docs.subset(range(10)), None, SMALL_BUILD, "dense-only"),
                      HybridGraph)
