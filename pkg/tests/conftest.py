import numpy as np
import pytest

from dmfsgd.sim import synthetic_lowrank

_criteria = []


@pytest.fixture(scope="session")
def rank5_truth():
    """Exact rank-5 nonnegative 100x100 matrix shared by the simulation tests."""
    return synthetic_lowrank(100, 5, np.random.default_rng(20240501))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    for name, value in report.user_properties:
        if name == "criterion":
            outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
            _criteria.append((value, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in sorted(_criteria, key=lambda c: int(c[0].split(".")[0])):
        terminalreporter.write_line(f"{outcome}  {label}")
