"""Time the sparse distance kernel on full versus magnitude-pruned documents.

    python scripts/prune_microbench.py [--ratios 0.2,0.4,0.6] [--docs 20000]
"""

import argparse
import time

import numpy as np

from hybrid_ann._kernels import METRIC_HYBRID, pair_distances
from hybrid_ann.distance import PruneConfig
from hybrid_ann.reference import ReferenceCache
from hybrid_ann.search import prepare_queries


def seconds(store, queries, docs, reps):
    nodes = np.arange(min(docs, store.count), dtype=np.int32)
    S = store.kernel_arrays()
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        for q in range(queries.count):
            lo, hi = queries.indptr[q], queries.indptr[q + 1]
            pair_distances(queries.dense64[q], queries.indices[lo:hi],
                           queries.values[lo:hi], nodes, METRIC_HYBRID, *S,
                           0.0, 1.0)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratios", default="0.2,0.4,0.6")
    ap.add_argument("--docs", type=int, default=20_000)
    ap.add_argument("--queries", type=int, default=100)
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()
    cache = ReferenceCache()
    docs = cache.docs()
    graph = cache.graph("two-stage")
    queries = prepare_queries(graph, cache.queries().subset(range(args.queries)))
    seconds(docs, queries.subset(range(2)), 100, 1)
    base = seconds(docs, queries, args.docs, args.reps)
    print(f"ratio 0.0: nnz/doc {docs.nnz / docs.count:.1f}  {base:.3f}s")
    for ratio in (float(x) for x in args.ratios.split(",")):
        pruned = docs.pruned(PruneConfig(ratio))
        t = seconds(pruned, queries, args.docs, args.reps)
        print(f"ratio {ratio}: nnz/doc {pruned.nnz / pruned.count:.1f}  {t:.3f}s  "
              f"speedup {base / t:.2f}x")


if __name__ == "__main__":
    main()
