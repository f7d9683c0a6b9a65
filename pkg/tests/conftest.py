import numpy as np
import pytest

from gsketch import RandomSource


@pytest.fixture
def source():
    return RandomSource(20240611)


@pytest.fixture
def gen():
    return np.random.default_rng(7)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def report_criterion(request):
    """Record one acceptance line; printed together at the end of the run."""

    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        request.config.stash[_ACCEPTANCE_KEY].append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
