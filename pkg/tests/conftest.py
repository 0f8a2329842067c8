import numpy as np
import pytest

from robustsdr.core import ProblemInstance

# lines appended by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def scalar_instance(radius=0.1, gamma=1.0, noise=0.1, h=1.0):
    return ProblemInstance(hbar=np.array([[h]], dtype=complex), radius=radius, noise=noise,
                           sinr_target=gamma)


@pytest.fixture
def scalar_inst():
    return scalar_instance()


def random_psd(rng, n, rank=None, scale=1.0):
    rank = n if rank is None else rank
    G = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return scale * (G @ G.conj().T)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
