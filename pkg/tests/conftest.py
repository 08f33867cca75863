import numpy as np
import pytest

from ntklab import _accel


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


def random_psd(rng, n, rank=None, floor=0.0):
    rank = n if rank is None else rank
    B = rng.normal(size=(n, rank))
    return B @ B.T + floor * np.eye(n)


# PASS/FAIL lines from the acceptance tests, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
