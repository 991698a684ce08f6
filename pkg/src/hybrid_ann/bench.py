"""Parameter sweeps over (sef, tau_dense, tau_hybrid) producing CSV reports.

QPS is the query count divided by the wall time of one pass over the whole
query set on one thread, measured after an untimed warm-up pass.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from hybrid_ann.evaluation import GroundTruth, Qrels, evaluate
from hybrid_ann.graph import HybridGraph
from hybrid_ann.search import SearchConfig, search_batch
from hybrid_ann.store import DocumentStore

CSV_COLUMNS = ("sef", "tau_dense", "tau_hybrid", "recall10", "ndcg10", "mrr10", "qps",
               "dense_calls", "sparse_calls")
DEFAULT_SEF = (10, 20, 40, 80, 120, 160, 200)
DEFAULT_TAU_DENSE = (0.6, 0.8, 0.9, 1.0)
DEFAULT_TAU_HYBRID = (0.0, 0.5, 0.8, 1.0)


@dataclass(frozen=True)
class SweepGrid:
    sef: Sequence[int] = DEFAULT_SEF
    tau_dense: Sequence[float] = DEFAULT_TAU_DENSE
    tau_hybrid: Sequence[float] = DEFAULT_TAU_HYBRID

    def points(self) -> Iterable[tuple[int, float, float]]:
        return itertools.product(self.sef, self.tau_dense, self.tau_hybrid)


@dataclass
class RunReport:
    sef: int
    tau_dense: float
    tau_hybrid: float
    recall10: float | None
    ndcg10: float | None
    mrr10: float | None
    qps: float | None          # None when timing is disabled
    dense_calls: float         # mean per query
    sparse_calls: float

    def row(self) -> list[str]:
        def f(x, digits=6):
            return "NA" if x is None else f"{x:.{digits}f}"
        return [str(self.sef), f(self.tau_dense, 2), f(self.tau_hybrid, 2), f(self.recall10),
                f(self.ndcg10), f(self.mrr10), f(self.qps, 1), f(self.dense_calls, 3),
                f(self.sparse_calls, 3)]


def run_point(graph: HybridGraph, queries: DocumentStore, cfg: SearchConfig,
              truth: GroundTruth | None = None, qrels: Qrels | None = None,
              timing: bool = True, warmup: bool = True, query_threads: int = 1) -> RunReport:
    if timing and warmup:
        search_batch(graph, queries, cfg, query_threads=query_threads)
    res = search_batch(graph, queries, cfg, query_threads=query_threads)
    metrics = evaluate(res.ids, truth, qrels, k=10)
    dense, sparse = res.mean_calls()
    return RunReport(cfg.sef, cfg.tau_dense, cfg.tau_hybrid, metrics.get("recall10"),
                     metrics.get("ndcg10"), metrics.get("mrr10"),
                     res.qps if timing else None, dense, sparse)


def sweep(graph: HybridGraph, queries: DocumentStore, grid: SweepGrid = SweepGrid(),
          truth: GroundTruth | None = None, qrels: Qrels | None = None, k: int = 10,
          mode: str = "two_stage", alpha: float | None = None, timing: bool = True,
          query_threads: int = 1) -> list[RunReport]:
    reports = []
    for sef, td, th in grid.points():
        cfg = SearchConfig(k=min(k, sef), sef=sef, tau_dense=td, tau_hybrid=th, mode=mode,
                           alpha=alpha)
        reports.append(run_point(graph, queries, cfg, truth, qrels, timing,
                                 query_threads=query_threads))
    return reports


def reports_csv(reports: Sequence[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def pareto_front(reports: Sequence[RunReport], metric: str = "recall10") -> list[RunReport]:
    """Reports not dominated in (metric, qps)."""
    pts = sorted((r for r in reports if getattr(r, metric) is not None and r.qps),
                 key=lambda r: (-getattr(r, metric), -r.qps))
    front, best_qps = [], -np.inf
    for r in pts:
        if r.qps > best_qps:
            front.append(r)
            best_qps = r.qps
    return front
