import numpy as np
import pytest

from lossnet.model import NetworkSpec

ACCEPTANCE_LINES = []


def random_specs(count, seed, R_max=4, J_max=3, C_max=8, A_max=2, zero_one=False):
    """Valid random specs: every class uses some resource and fits an empty network."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        R = int(rng.integers(1, R_max + 1))
        J = int(rng.integers(1, J_max + 1))
        C = rng.integers(1, C_max + 1, size=J)
        top = 1 if zero_one else A_max
        A = rng.integers(0, top + 1, size=(J, R))
        A = np.minimum(A, C[:, None])
        if np.any(A.sum(axis=0) == 0):
            continue
        kappa = np.round(rng.uniform(0.2, 4.0, size=R), 3)
        out.append(NetworkSpec.build(kappa, A, C))
    return out


@pytest.fixture(scope="session")
def small_specs():
    return random_specs(20, seed=101)


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
