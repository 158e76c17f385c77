import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = OrderedDict([
    (1, "Gaussian evidence vs quadrature / Monte Carlo"),
    (2, "Bernoulli Laplace evidence vs importance sampling"),
    (3, "MJMCMC vs enumeration (HPM, total variation)"),
    (4, "exact recovery of y = ln x"),
    (5, "invariance suite (property-based)"),
    (6, "benchmark directional reproduction"),
    (7, "simulation fidelity"),
    (8, "real-data figures replaced by fit round-trip validation"),
])

_outcomes: dict[int, list[tuple[str, str]]] = {k: [] for k in CRITERIA}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = report.outcome if not report.skipped else "skipped"
        _outcomes[marker.args[0]].append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not any(_outcomes.values()):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, title in CRITERIA.items():
        runs = _outcomes[k]
        if not runs:
            tr.write_line(f"criterion {k}: NOT RUN  {title}")
            continue
        ok = all(s == "passed" for _, s in runs)
        tr.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {title}  ({len(runs)} checks)")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
