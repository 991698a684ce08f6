"""Sweep sef x tau over the cached reference graphs and write one CSV per search mode.

    python scripts/sweep_reference.py --out results/ [--no-timing]

Rows for two_stage on the refined graph, naive_hybrid on the refined graph and
naive_hybrid on the naive-hybrid graph, plus the recall/QPS Pareto front.
"""

import argparse
from pathlib import Path

from hybrid_ann.bench import SweepGrid, pareto_front, reports_csv, sweep
from hybrid_ann.reference import ReferenceCache

RUNS = (("two-stage", "two_stage"), ("two-stage", "naive_hybrid"),
        ("naive-hybrid", "naive_hybrid"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--root", type=Path, default=None)
    ap.add_argument("--no-timing", action="store_true")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    cache = ReferenceCache(root=args.root)
    truth, qrels = cache.groundtruth(), cache.qrels()
    for build, mode in RUNS:
        grid = SweepGrid() if mode == "two_stage" else SweepGrid(tau_dense=(1.0,))
        reports = sweep(cache.graph(build), cache.queries(), grid, truth, qrels, mode=mode,
                        timing=not args.no_timing)
        path = args.out / f"{build}-{mode}.csv"
        path.write_text(reports_csv(reports))
        print(f"{path}: {len(reports)} rows")
        for r in pareto_front(reports):
            print(f"  sef={r.sef} tau={r.tau_dense}/{r.tau_hybrid} recall={r.recall10:.4f} "
                  f"qps={r.qps:.1f} sparse_calls={r.sparse_calls:.0f}")


if __name__ == "__main__":
    main()
