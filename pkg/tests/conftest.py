import numpy as np
import pytest

from asmc.targets import GaussianMixtureEnergy


@pytest.fixture
def fig3_mixture():
    return GaussianMixtureEnergy(
        [0.7, 0.3], [[-1.0, 0.0], [1.0, 0.0]], [[0.09, 0.04], [0.02, 0.18]]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Print and collect one PASS/FAIL line per acceptance criterion."""

    def record(cid, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {cid}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
