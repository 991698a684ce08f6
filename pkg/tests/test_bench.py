import pytest

from hybrid_ann.bench import (CSV_COLUMNS, RunReport, SweepGrid, pareto_front, read_csv,
                              reports_csv, run_point, sweep)
from hybrid_ann.evaluation import brute_force
from hybrid_ann.search import SearchConfig

GRID = SweepGrid(sef=(16, 32), tau_dense=(0.8, 1.0), tau_hybrid=(1.0,))


@pytest.fixture(scope="module")
def truth(small_graph, small_data):
    return brute_force(small_graph.store, small_data.queries, small_graph.params, 10)


def test_csv_columns(small_graph, small_data, truth):
    reports = sweep(small_graph, small_data.queries, GRID, truth, small_data.qrels)
    rows = read_csv(reports_csv(reports))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [(r["sef"], r["tau_dense"]) for r in rows] == [("16", "0.80"), ("16", "1.00"),
                                                          ("32", "0.80"), ("32", "1.00")]
    assert all(float(r["qps"]) > 0 for r in rows)


def test_no_timing_reproducible(small_graph, small_data, truth):
    a = reports_csv(sweep(small_graph, small_data.queries, GRID, truth, timing=False))
    b = reports_csv(sweep(small_graph, small_data.queries, GRID, truth, timing=False))
    assert a == b
    assert all(r["qps"] == "NA" and r["mrr10"] == "NA" for r in read_csv(a))


def test_recall_grows_with_sef(small_graph, small_data, truth):
    lo = run_point(small_graph, small_data.queries, SearchConfig(sef=10), truth, timing=False)
    hi = run_point(small_graph, small_data.queries, SearchConfig(sef=100), truth, timing=False)
    assert hi.recall10 >= lo.recall10
    assert hi.sparse_calls > lo.sparse_calls


def report(recall, qps):
    return RunReport(10, 1.0, 1.0, recall, None, None, qps, 0.0, 0.0)


def test_pareto_front():
    pts = [report(0.9, 100), report(0.95, 50), report(0.8, 90), report(0.99, 10), report(0.9, 120)]
    front = pareto_front(pts)
    assert [(r.recall10, r.qps) for r in front] == [(0.99, 10), (0.95, 50), (0.9, 120)]


def test_pareto_skips_untimed():
    assert pareto_front([report(0.9, None)]) == []
