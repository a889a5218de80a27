import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from kamlab.dynamics import CosinePotential, TonelliModel, Torus, ZeroPotential  # noqa: E402
from kamlab.hopf_lax import cut_data, weak_kam_solve  # noqa: E402


@pytest.fixture(scope="session")
def free():
    return TonelliModel(Torus(), ZeroPotential())


@pytest.fixture(scope="session")
def pendulum():
    return TonelliModel(Torus(), CosinePotential(1.0))


@pytest.fixture(scope="session")
def wk(pendulum):
    """Weak KAM solution of the pendulum at N = 512 (c0 taken from the solver)."""
    return weak_kam_solve(pendulum, delta=0.05, n=512)


@pytest.fixture(scope="session")
def wk_free(free):
    return weak_kam_solve(free, delta=0.05, n=512)


@pytest.fixture(scope="session")
def cut(pendulum, wk):
    return cut_data(pendulum, wk)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}  {'PASS' if ok else 'FAIL'}  {title}: {detail}")
