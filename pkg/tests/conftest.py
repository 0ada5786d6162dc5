"""Shared fixtures.

Time domain runs of the reference scenario are expensive, so each contrast
is simulated once per session and shared between modules.
"""

import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from layered_enclosure.forward import simulate
from layered_enclosure.scenario import reference_scenario

settings.register_profile(
    "repo", deadline=None, max_examples=60, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

REGION_TAUS = (20.0, 40.0)
_cache = {}


def reference_record(contrast: float):
    """Split record of the reference scenario at h = 0.05, tau up to 80."""
    key = float(contrast)
    if key not in _cache:
        sc = reference_scenario(contrast=key)
        rec = simulate(sc, tau_max=80.0, laplace_taus=REGION_TAUS, laplace_region=sc.obstacle)
        _cache[key] = (sc, rec)
    return _cache[key]


@pytest.fixture(scope="session")
def ref_a1():
    return reference_record(-0.8)


@pytest.fixture(scope="session")
def ref_a1_strong():
    return reference_record(-1.0)


@pytest.fixture(scope="session")
def ref_a2():
    return reference_record(1.0)


@pytest.fixture(scope="session")
def ref_null():
    return reference_record(0.0)


@pytest.fixture(scope="session")
def l_ref():
    return 1.1 / np.sqrt(2.0) + 0.9


def pytest_terminal_summary(terminalreporter):
    results = {}
    for name, mod in list(sys.modules.items()):
        if name.rsplit(".", 1)[-1] == "test_acceptance":
            results.update(getattr(mod, "RESULTS", {}))
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
