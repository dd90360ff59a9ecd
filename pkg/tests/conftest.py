import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference(f, x, step=1e-6):
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step * (1.0 + abs(x[j]))
        g[j] = (f(x + e) - f(x - e)) / (2 * e[j])
    return g


# -- acceptance summary ----------------------------------------------------------

_verdicts = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        lines = [ln for ln in report.capstdout.splitlines() if ln.startswith(("[PASS]", "[FAIL]"))]
        fallback = f"[{'PASS' if report.passed else 'FAIL'}] {report.nodeid.split('::')[-1]}"
        _verdicts.append(lines[-1] if lines else fallback)


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
