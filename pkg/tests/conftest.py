import numpy as np
import pytest
from scipy.special import beta as beta_fn

from fdelab.functionals import FdeParams
from fdelab.geometry import build_grid
from fdelab.profiles import minimize_rayleigh

# max of the 1-D least-energy profile for m=3 on (0,1): 3 I^2 with I = B(1/3,1/2)/3
PROFILE_MAX_M3 = 3 * (beta_fn(1 / 3, 1 / 2) / 3) ** 2


@pytest.fixture(scope="session")
def p3():
    return FdeParams(3.0, 1)


@pytest.fixture(scope="session")
def line128():
    return build_grid("interval", a=0.0, b=1.0, n=128)


@pytest.fixture(scope="session")
def line256():
    return build_grid("interval", a=0.0, b=1.0, n=256)


@pytest.fixture(scope="session")
def profile128(p3, line128):
    return minimize_rayleigh(p3, line128)


@pytest.fixture(scope="session")
def profile256(p3, line256):
    return minimize_rayleigh(p3, line256)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
