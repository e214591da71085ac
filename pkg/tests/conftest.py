import numpy as np
import pytest

from lorentzlab import geometry

INFINITE = [((0.5, 0.5), 0.4)]
FINITE = [((0.0, 0.0), 0.4), ((0.5, 0.5), 0.2)]
PARALLEL = [((0.0, 0.4), 0.26), ((0.5, 0.6), 0.26)]


@pytest.fixture(scope="session")
def infinite_lattice():
    return geometry.validate_config(INFINITE)


@pytest.fixture(scope="session")
def finite_lattice():
    return geometry.validate_config(FINITE)


@pytest.fixture(scope="session")
def parallel_lattice():
    return geometry.validate_config(PARALLEL)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(number, passed, detail)`` prints and records one verdict line."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append((number, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
