"""Hybrid dense+sparse approximate nearest neighbour search on HNSW graphs."""

from hybrid_ann.alignment import AlignmentParams, SamplePlan, WeightSweep, calibrate
from hybrid_ann.distance import HybridVector, PruneConfig, SparseVector, hybrid_distance
from hybrid_ann.evaluation import GroundTruth, brute_force, evaluate
from hybrid_ann.graph import BuildConfig, BuildStage, HybridGraph, build_index
from hybrid_ann.search import SearchConfig, search, search_batch
from hybrid_ann.store import DocumentStore

__all__ = [
    "AlignmentParams", "BuildConfig", "BuildStage", "DocumentStore", "GroundTruth",
    "HybridGraph", "HybridVector", "PruneConfig", "SamplePlan", "SearchConfig",
    "SparseVector", "WeightSweep", "brute_force", "build_index", "calibrate",
    "evaluate", "hybrid_distance", "search", "search_batch",
]
