import numpy as np
import pytest

from semlearn.experiments import pendulum_initial_state
from semlearn.systems import integrate, pendulum_system, uniform_grid


@pytest.fixture(scope="session")
def pendulum_traj():
    """Noiseless pendulum on 2001 nodes over [0, 20] from (0.3, 0)."""
    return integrate(pendulum_system(), [0.3, 0.0], uniform_grid(20.0, 2001))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pendulum_seed_traj(seed, n=150):
    return integrate(pendulum_system(), pendulum_initial_state(seed), uniform_grid(20.0, n))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
