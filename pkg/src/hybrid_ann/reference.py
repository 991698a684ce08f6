"""The desk-scale reference corpus and a disk cache of its expensive artifacts.

Building the naive-hybrid graph over 100k documents takes tens of minutes on
one core, so graphs, ground truth and their measured build times are cached.
The cache key hashes the generator/build/search sources, so any change to the
algorithms invalidates stale artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import replace
from pathlib import Path

from hybrid_ann import formats
from hybrid_ann.alignment import AlignmentParams, SamplePlan, WeightSweep, calibrate
from hybrid_ann.distance import PruneConfig
from hybrid_ann.evaluation import GroundTruth, brute_force
from hybrid_ann.graph import BuildConfig, HybridGraph, build_index
from hybrid_ann.store import DocumentStore
from hybrid_ann.synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger(__name__)

REFERENCE_SPEC = SyntheticSpec(doc_count=100_000, query_count=1_000, dense_dim=128,
                               sparse_dim=30_000, avg_nnz=128, rho=0.6, seed=1234,
                               query_nnz=48)
REFERENCE_BUILD = BuildConfig(m=32, cef_dense=200, cef_hybrid=32, threads=1, seed=0)
REFERENCE_PLAN = SamplePlan(query_fraction=0.01, doc_fraction=0.01, seed=0)

_SOURCES = ("_kernels.py", "_graph_kernels.py", "alignment.py", "distance.py", "graph.py",
            "store.py", "synthetic.py", "evaluation.py")


def source_key() -> str:
    h = hashlib.sha256()
    here = Path(__file__).parent
    for name in _SOURCES:
        h.update((here / name).read_bytes())
    return h.hexdigest()[:12]


def default_cache_root() -> Path:
    root = os.environ.get("HYBRID_ANN_CACHE") or os.environ.get(formats.DATA_DIR_ENV)
    return Path(root) if root else Path.home() / ".cache" / "hybrid_ann"


class ReferenceCache:
    """Lazily computed, disk-backed artifacts for one corpus spec."""

    def __init__(self, spec: SyntheticSpec = REFERENCE_SPEC, build: BuildConfig = REFERENCE_BUILD,
                 plan: SamplePlan = REFERENCE_PLAN, root: Path | None = None):
        self.spec, self.build, self.plan = spec, build, plan
        tag = hashlib.sha256(json.dumps([spec.to_dict(), repr(build), repr(plan)],
                                        sort_keys=True).encode()).hexdigest()[:8]
        self.dir = (root or default_cache_root()) / f"reference-{source_key()}-{tag}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._mem: dict = {}

    def _path(self, name: str) -> Path:
        return self.dir / name

    def _memo(self, key, fn):
        if key not in self._mem:
            self._mem[key] = fn()
        return self._mem[key]

    # ------------------------------------------------------------ data

    def raw(self) -> tuple[DocumentStore, DocumentStore, dict]:
        def load():
            d, q, r = (self._path(x) for x in ("docs", "queries", "qrels.tsv"))
            if not r.exists():
                log.info("generating reference corpus in %s", self.dir)
                data = generate_synthetic(self.spec)
                formats.save_store(d.with_suffix(".hdv"), d.with_suffix(".hsv"), data.docs)
                formats.save_store(q.with_suffix(".hdv"), q.with_suffix(".hsv"), data.queries)
                formats.save_qrels(r, data.qrels)
            return (formats.load_store(d.with_suffix(".hdv"), d.with_suffix(".hsv")),
                    formats.load_store(q.with_suffix(".hdv"), q.with_suffix(".hsv")),
                    formats.load_qrels(r))
        return self._memo("raw", load)

    def params(self) -> AlignmentParams:
        def load():
            p = self._path("calibration.json")
            if not p.exists():
                docs, queries, qrels = self.raw()
                cal = calibrate(docs, queries, self.plan, WeightSweep(), qrels)
                formats.save_calibration(p, cal.params)
            return formats.load_calibration(p)
        return self._memo("params", load)

    def docs(self) -> DocumentStore:
        from hybrid_ann.alignment import normalize_store
        return self._memo("docs", lambda: normalize_store(self.raw()[0],
                                                          self.params().norm_denominator))

    def queries(self) -> DocumentStore:
        return self.raw()[1]

    def qrels(self) -> dict:
        return self.raw()[2]

    def groundtruth(self, k: int = 10, dense_only: bool = False) -> GroundTruth:
        def load():
            p = self._path(f"gt-{'dense' if dense_only else 'hybrid'}-{k}.hgt")
            if not p.exists():
                gt = brute_force(self.docs(), self.queries(), self.params(), k, dense_only)
                formats.save_groundtruth(p, gt)
            return formats.load_groundtruth(p)
        return self._memo(("gt", k, dense_only), load)

    # ------------------------------------------------------------ graphs

    def graph(self, mode: str = "two-stage", prune_ratio: float = 0.0) -> HybridGraph:
        """Cached graph; ``graph.stats`` holds the build times measured when it was built."""
        def load():
            name = f"{mode}-prune{prune_ratio:g}"
            p, meta = self._path(name + ".hix"), self._path(name + ".json")
            if not (p.exists() and meta.exists()):
                cfg = replace(self.build, prune=PruneConfig(prune_ratio))
                log.info("building %s graph (this is slow the first time)", name)
                # compile the kernels first so the timing covers only the build
                build_index(self.docs().subset(range(min(64, self.spec.doc_count))),
                            self.params(), cfg, mode)
                t0 = time.perf_counter()
                g = build_index(self.docs(), self.params(), cfg, mode)
                stats = g.stats.as_dict()
                stats["wall_seconds"] = time.perf_counter() - t0
                formats.save_index(p, g)
                meta.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
            g = formats.load_index(p)
            g.stats = json.loads(meta.read_text())
            return g
        return self._memo(("graph", mode, prune_ratio), load)

    def warm(self) -> None:
        """Compute every artifact the acceptance suite uses."""
        self.params()
        self.groundtruth()
        for mode in ("two-stage", "naive-hybrid"):
            self.graph(mode)
        self.graph("two-stage", 0.4)
