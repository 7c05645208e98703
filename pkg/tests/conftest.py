"""Shared fixtures: the unstable Robin plant and its controller."""
import numpy as np
import pytest

from rdpredict.delayfield import DelayField
from rdpredict.design import make_design
from rdpredict.sim import SimulationConfig, run
from rdpredict.spectral import (Coefficient, Grid, SturmLiouvilleProblem,
                                solve_eigensystem)

THETA1 = np.pi / 3
THETA2 = np.pi / 10
Y0_COEFFS = [0.5, -13.0, 32.0, -20.0]   # (1 - 2x)/2 + 20 x (1 - x)(x - 3/5)


@pytest.fixture(scope="session")
def robin_problem():
    return SturmLiouvilleProblem(
        rho=Coefficient.constant(1.0), p=Coefficient.constant(0.015),
        q=Coefficient.constant(0.35), theta1=THETA1, theta2=THETA2)


@pytest.fixture(scope="session")
def basis20(robin_problem):
    return solve_eigensystem(robin_problem, 20)


@pytest.fixture(scope="session")
def basis30(robin_problem):
    return solve_eigensystem(robin_problem, 30)


@pytest.fixture(scope="session")
def basis40(robin_problem):
    return solve_eigensystem(robin_problem, 40)


@pytest.fixture(scope="session")
def fine_basis20(robin_problem):
    """10x spatial resolution; independent quadrature oracle."""
    return solve_eigensystem(robin_problem, 20, grid=Grid.simpson(12001))


@pytest.fixture(scope="session")
def design20(basis20):
    return make_design(basis20, 1.0, [-0.3, -0.3], 0.2)


@pytest.fixture(scope="session")
def paper_delay():
    return DelayField(kind="paper_example", D0=1.0, delta_claimed=0.23,
                      params={"amplitude": 0.23})


@pytest.fixture(scope="session")
def y0_samples(basis20):
    return Coefficient.polynomial(Y0_COEFFS)(basis20.grid.nodes)


@pytest.fixture(scope="session")
def y0_func():
    return Coefficient.polynomial(Y0_COEFFS)


@pytest.fixture(scope="session")
def run5(robin_problem, basis20, design20, paper_delay, y0_samples):
    """Closed-loop trajectory over 5 s, shared by the oracle comparisons."""
    cfg = SimulationConfig(problem=robin_problem, basis=basis20, design=design20,
                           delay=paper_delay, y0_samples=y0_samples,
                           t_end=5.0, dt=1e-3)
    return run(cfg)


@pytest.fixture(scope="session")
def dirichlet_problem():
    return SturmLiouvilleProblem(
        rho=Coefficient.constant(1.0), p=Coefficient.constant(1.0),
        q=Coefficient.constant(0.0), theta1=0.0, theta2=0.0)
