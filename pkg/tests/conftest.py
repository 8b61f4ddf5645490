import numpy as np
import pytest

from bridgeflow.core import GaussianMixture
from bridgeflow.drift import PolynomialPotential


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def double_well_potential():
    # 1/4 (1 + x1^4) + 1/2 (x2^2 - x1^2)
    return PolynomialPotential(2, [(0.25, (0, 0)), (0.25, (4, 0)), (0.5, (0, 2)), (-0.5, (2, 0))])


def double_well_endpoints():
    rho0 = GaussianMixture([1.0], [[-2.0, 0.0]], [np.diag([0.8, 0.7])])
    rho1 = GaussianMixture(
        [0.5, 0.5],
        [[1.5, 2.0], [1.5, -2.0]],
        [np.diag([0.5, 0.8]), np.diag([0.7, 0.8])],
    )
    return rho0, rho1


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for k in sorted(verdicts):
            terminalreporter.write_line(verdicts[k])
