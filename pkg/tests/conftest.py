import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybrid_ann.alignment import SamplePlan, WeightSweep, calibrate
from hybrid_ann.graph import BuildConfig, build_index
from hybrid_ann.synthetic import SyntheticSpec, generate_synthetic

# compiled kernels make the first example slow; deadlines would only measure the JIT
settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL = SyntheticSpec(doc_count=600, query_count=60, dense_dim=32, sparse_dim=3000,
                      avg_nnz=24, rho=0.6, seed=7, n_clusters=16)
SMALL_BUILD = BuildConfig(m=8, cef_dense=64, cef_hybrid=16, seed=3)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(SMALL)


@pytest.fixture(scope="session")
def small_cal(small_data):
    return calibrate(small_data.docs, small_data.queries, SamplePlan(0.5, 0.5, 0),
                     WeightSweep(), small_data.qrels)


@pytest.fixture(scope="session")
def small_params(small_cal):
    return small_cal.params


@pytest.fixture(scope="session")
def small_docs(small_cal):
    return small_cal.docs


@pytest.fixture(scope="session")
def small_graph(small_docs, small_params):
    return build_index(small_docs, small_params, SMALL_BUILD, "two-stage")


@pytest.fixture(scope="session")
def small_dense_graph(small_docs, small_params):
    return build_index(small_docs, small_params, SMALL_BUILD, "dense-only")


@pytest.fixture(scope="session")
def small_naive_graph(small_docs, small_params):
    return build_index(small_docs, small_params, SMALL_BUILD, "naive-hybrid")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
