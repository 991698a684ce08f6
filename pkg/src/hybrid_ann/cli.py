"""Command-line driver: synth, calibrate, build, groundtruth, search, bench, eval.

A dataset directory holds ``docs.hdv``/``docs.hsv`` (dense/sparse documents),
``queries.hdv``/``queries.hsv`` and optionally ``qrels.tsv``. Relative paths
are looked up under $HYBRID_ANN_DATA_DIR when they do not exist as given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from hybrid_ann import formats
from hybrid_ann.alignment import SamplePlan, WeightSweep, calibrate, normalize_store
from hybrid_ann.bench import SweepGrid, reports_csv, sweep
from hybrid_ann.distance import PruneConfig
from hybrid_ann.errors import HybridAnnError
from hybrid_ann.evaluation import GroundTruth, brute_force, evaluate
from hybrid_ann.graph import BUILD_MODES, BuildConfig, build_index
from hybrid_ann.search import MODES, SearchConfig, search_batch
from hybrid_ann.synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger("hybrid_ann")

DOCS = ("docs.hdv", "docs.hsv")
QUERIES = ("queries.hdv", "queries.hsv")
QRELS = "qrels.tsv"


class UsageError(Exception):
    pass


def _existing(path) -> Path:
    p = formats.data_path(path)
    if not p.exists():
        raise UsageError(f"file not found: {path}")
    return p


def _load_set(data_dir, names):
    d = _existing(data_dir)
    return formats.load_store(_existing(d / names[0]), _existing(d / names[1]))


def _load_qrels(args):
    if getattr(args, "qrels", None):
        return formats.load_qrels(_existing(args.qrels))
    data = getattr(args, "data", None)
    if data and (formats.data_path(data) / QRELS).exists():
        return formats.load_qrels(formats.data_path(data) / QRELS)
    return None


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> None:
    spec = SyntheticSpec(doc_count=args.docs, query_count=args.queries, dense_dim=args.dense_dim,
                         sparse_dim=args.sparse_dim, avg_nnz=args.avg_nnz, rho=args.rho,
                         seed=args.seed, query_nnz=args.query_nnz)
    data = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.save_store(out / DOCS[0], out / DOCS[1], data.docs)
    formats.save_store(out / QUERIES[0], out / QUERIES[1], data.queries)
    formats.save_qrels(out / QRELS, data.qrels)
    (out / "synth.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"wrote {data.docs.count} docs and {data.queries.count} queries to {out}")


def cmd_calibrate(args) -> None:
    docs = _load_set(args.data, DOCS)
    queries = _load_set(args.data, QUERIES)
    qrels = _load_qrels(args)
    plan = SamplePlan(args.query_fraction, args.doc_fraction, args.seed)
    sweep_cfg = WeightSweep() if (qrels is not None and not args.no_sweep) else None
    cal = calibrate(docs, queries, plan, sweep_cfg, qrels, k=args.k)
    p = cal.params
    print(f"norm_denominator={p.norm_denominator!r} gamma={p.gamma!r} alpha={p.alpha!r}")
    if qrels is None:
        print("no qrels found: alpha left at its default", file=sys.stderr)
    formats.save_calibration(args.out, p, {"sampled_queries": int(cal.sample_query_ids.size),
                                           "sampled_docs": int(cal.sample_doc_ids.size)})


def cmd_build(args) -> None:
    docs = _load_set(args.data, DOCS)
    params = formats.load_calibration(_existing(args.calibration)) if args.calibration else None
    if params is None and args.mode != "dense-only":
        raise UsageError(f"--mode {args.mode} needs --calibration (run `calibrate` first)")
    if params is not None:
        docs = normalize_store(docs, params.norm_denominator)
        if args.alpha is not None:
            params = params.with_alpha(args.alpha)
    cfg = BuildConfig(m=args.m, cef_dense=args.cef_dense, cef_hybrid=args.cef_hybrid,
                      threads=args.threads, seed=args.seed, strict_m=args.strict_m,
                      prune=PruneConfig(args.prune_ratio, args.prune_queries))
    graph = build_index(docs, params, cfg, args.mode)
    formats.save_index(args.out, graph)
    print(json.dumps(graph.stats.as_dict(), sort_keys=True))


def cmd_groundtruth(args) -> None:
    if args.index:
        graph = formats.load_index(_existing(args.index))
        store, params = graph.store, graph.params
    else:
        store = _load_set(args.data, DOCS)
        params = formats.load_calibration(_existing(args.calibration)) if args.calibration else None
        if params is not None:
            store = normalize_store(store, params.norm_denominator)
    if params is not None and args.alpha is not None:
        params = params.with_alpha(args.alpha)
    if params is None and not args.dense_only:
        raise UsageError("hybrid ground truth needs --calibration or a calibrated --index")
    queries = _load_set(args.data, QUERIES)
    t0 = time.perf_counter()
    gt = brute_force(store, queries, params, args.k, dense_only=args.dense_only)
    formats.save_groundtruth(args.out, gt)
    print(f"exact top-{gt.k} for {len(gt)} queries in {time.perf_counter() - t0:.2f}s")


def _search_cfg(args) -> SearchConfig:
    return SearchConfig(k=args.k, sef=args.sef, tau_dense=args.tau_dense,
                        tau_hybrid=args.tau_hybrid, mode=args.mode, alpha=args.alpha,
                        fresh_stage2=args.fresh_stage2)


def cmd_search(args) -> None:
    graph = formats.load_index(_existing(args.index))
    queries = _load_set(args.data, QUERIES)
    res = search_batch(graph, queries, _search_cfg(args), query_threads=args.query_threads)
    formats.save_groundtruth(args.out, GroundTruth(res.ids.astype(np.int64),
                                                   res.distances.astype(np.float32)))
    c = res.counters.mean(axis=0)
    print(json.dumps({"queries": len(res.ids), "qps": round(res.qps, 1),
                      "dense_calls": float(c[0]), "sparse_calls": float(c[1]),
                      "expansions_stage1": float(c[2]), "expansions_stage2": float(c[3])}))


def cmd_bench(args) -> None:
    graph = formats.load_index(_existing(args.index))
    queries = _load_set(args.data, QUERIES)
    truth = formats.load_groundtruth(_existing(args.groundtruth)) if args.groundtruth else None
    qrels = _load_qrels(args)
    if truth is None and qrels is None:
        raise UsageError("bench needs --groundtruth and/or qrels to score against")
    grid = SweepGrid(_ints(args.sef), _floats(args.tau_dense), _floats(args.tau_hybrid))
    reports = sweep(graph, queries, grid, truth, qrels, k=args.k, mode=args.mode,
                    alpha=args.alpha, timing=not args.no_timing, query_threads=args.query_threads)
    _write_text(args.out, reports_csv(reports))


def cmd_eval(args) -> None:
    res = formats.load_groundtruth(_existing(args.results))
    truth = formats.load_groundtruth(_existing(args.groundtruth)) if args.groundtruth else None
    qrels = formats.load_qrels(_existing(args.qrels)) if args.qrels else None
    if truth is None and qrels is None:
        raise UsageError("eval needs --groundtruth and/or --qrels")
    if truth is not None and len(truth) != len(res):
        raise UsageError(f"results cover {len(res)} queries but ground truth covers {len(truth)}")
    print(json.dumps(evaluate(res.ids, truth, qrels, k=args.k), sort_keys=True))


# ------------------------------------------------------------------ parser


def _add_search_flags(p, grid: bool) -> None:
    p.add_argument("--index", required=True)
    p.add_argument("--data", required=True, help="dataset directory holding the queries")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=sorted(MODES), default="two_stage")
    p.add_argument("--alpha", type=float, default=None, help="override the calibrated weight")
    p.add_argument("--query-threads", type=int, default=1)
    if grid:
        p.add_argument("--sef", default=",".join(map(str, SweepGrid().sef)))
        p.add_argument("--tau-dense", default=",".join(map(str, SweepGrid().tau_dense)))
        p.add_argument("--tau-hybrid", default=",".join(map(str, SweepGrid().tau_hybrid)))
    else:
        p.add_argument("--sef", type=int, default=64)
        p.add_argument("--tau-dense", type=float, default=1.0)
        p.add_argument("--tau-hybrid", type=float, default=1.0)
        p.add_argument("--fresh-stage2", action="store_true",
                       help="restart the hybrid phase from its entry point")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-ann", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=10_000)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--dense-dim", type=int, default=128)
    p.add_argument("--sparse-dim", type=int, default=30_000)
    p.add_argument("--avg-nnz", type=int, default=128)
    p.add_argument("--query-nnz", type=int, default=None)
    p.add_argument("--rho", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="derive normalization, gamma and alpha")
    p.add_argument("--data", required=True)
    p.add_argument("--qrels", help="defaults to qrels.tsv in the dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--query-fraction", type=float, default=0.01)
    p.add_argument("--doc-fraction", type=float, default=0.01)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--no-sweep", action="store_true", help="keep alpha at 0.5")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("build", help="build an index file")
    p.add_argument("--data", required=True)
    p.add_argument("--calibration")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=BUILD_MODES, default="two-stage")
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--cef-dense", type=int, default=200)
    p.add_argument("--cef-hybrid", type=int, default=32)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--prune-ratio", type=float, default=0.0)
    p.add_argument("--prune-queries", action="store_true")
    p.add_argument("--strict-m", action="store_true", help="refined layer-0 lists hold m, not 2m")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("groundtruth", help="exact top-k by exhaustive scan")
    p.add_argument("--data", required=True)
    p.add_argument("--index", help="take documents and params from an index file")
    p.add_argument("--calibration")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--dense-only", action="store_true")
    p.set_defaults(func=cmd_groundtruth)

    p = sub.add_parser("search", help="search a query set with one configuration")
    _add_search_flags(p, grid=False)
    p.add_argument("--out", required=True, help="results file (ground-truth format)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", help="sweep sef x tau_dense x tau_hybrid into CSV")
    _add_search_flags(p, grid=True)
    p.add_argument("--groundtruth")
    p.add_argument("--qrels")
    p.add_argument("--out", default="-")
    p.add_argument("--no-timing", action="store_true", help="write NA for qps (reproducible CSV)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="score a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--groundtruth")
    p.add_argument("--qrels")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, HybridAnnError, OSError) as exc:
        print(f"hybrid-ann {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
