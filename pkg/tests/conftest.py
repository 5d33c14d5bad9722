import math

import numpy as np
import pytest
from hypothesis import settings

from glider_anomaly.data_io.config import from_dict
from glider_anomaly.simulator import AnomalyInjection, simulate, to_dense_records, to_sparse_records

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

T_ANOMALY = 72 * 3600.0


@pytest.fixture(scope="session")
def run_cfg():
    return from_dict({})


@pytest.fixture(scope="session")
def clean_truth(run_cfg):
    return simulate(run_cfg.sim)


@pytest.fixture(scope="session")
def degraded_truth(run_cfg):
    return simulate(run_cfg.sim, [AnomalyInjection("speed_degradation", T_ANOMALY, math.inf, 0.6)])


@pytest.fixture(scope="session")
def clean_streams(clean_truth, run_cfg):
    return to_dense_records(clean_truth), to_sparse_records(clean_truth, run_cfg.sim)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, note = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {note}")
