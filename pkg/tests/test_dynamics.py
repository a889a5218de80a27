import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamlab.dynamics import (Box, CosinePotential, PhasePoint, TabulatedPotential, TonelliModel, Torus,
                             flow_map, hamiltonian, hamiltonian_flow, lagrangian, legendre,
                             legendre_inverse, verlet)
from kamlab.errors import DomainError, IntegrationError
from oracles import cos_dV, dop853_flow


def test_lagrangian_examples(free, pendulum):
    assert lagrangian(free, 0.0, 1.0) == 0.5
    assert lagrangian(pendulum, 0.0, 0.0) == -1.0
    assert lagrangian(pendulum, 0.25, 2.0) == pytest.approx(2.0, abs=1e-15)


def test_hamiltonian_examples(free, pendulum):
    assert hamiltonian(free, 0.3, 2.0) == 2.0
    assert hamiltonian(pendulum, 0.5, 0.0) == -1.0
    assert hamiltonian(pendulum, 0.0, 2.0) == 3.0


def test_legendre_identity_and_fenchel(pendulum):
    assert legendre(pendulum, 0.1, 0.7) == 0.7
    p = np.array([0.3, -1.7, 2.5])
    assert np.array_equal(legendre(pendulum, 0.2, legendre_inverse(pendulum, 0.2, p)), p)
    x = np.array([0.1, 0.4, 0.9])
    v = legendre_inverse(pendulum, x, p)
    lhs = p * v - lagrangian(pendulum, x, v)
    np.testing.assert_allclose(lhs, hamiltonian(pendulum, x, p), rtol=1e-12)


def test_box_rejects_outside_points():
    m = TonelliModel(Box((0.0,), (1.0,)), CosinePotential())
    with pytest.raises(DomainError):
        hamiltonian(m, 1.5, 0.0)


def test_free_flight_wraps(free):
    x, p = flow_map(free, 0.0, 0.5, 1.0)
    assert x == pytest.approx(0.5) and p == 0.5
    x, p = flow_map(free, 0.9, 0.5, 1.0)
    assert x == pytest.approx(0.4)


def test_pendulum_equilibrium(pendulum):
    x, p = flow_map(pendulum, 0.5, 0.0, 1.0)
    assert x == pytest.approx(0.5, abs=1e-14) and abs(p) < 1e-12


def test_flow_against_dop853(pendulum):
    traj = hamiltonian_flow(pendulum, PhasePoint(0.25, 1.0), 0.3, 10_000)
    H = hamiltonian(pendulum, traj.x, traj.p)
    assert abs(H[-1] - H[0]) <= 1e-8
    # whole-path drift obeys the C h^2 bound with C of order |V''| p^2
    assert np.max(np.abs(H - H[0])) <= 100.0 * (0.3 / 10_000) ** 2
    xr, pr = dop853_flow(cos_dV, 0.25, 1.0, 0.3)
    assert abs(Torus().displacement(xr, traj.end.x)) < 1e-7
    assert abs(traj.end.p - pr) < 1e-7


def test_energy_error_is_second_order(pendulum):
    errs = []
    for steps in (100, 200, 400):
        tr = hamiltonian_flow(pendulum, PhasePoint(0.1, 1.5), 1.0, steps)
        H = hamiltonian(pendulum, tr.x, tr.p)
        errs.append(np.max(np.abs(H - H[0])))
    ratios = [errs[k] / errs[k + 1] for k in range(2)]
    assert all(3.5 < r < 4.5 for r in ratios)


H_STEP = 2.5e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(-3, 3),
       st.integers(-4000, 4000).filter(bool), st.integers(-4000, 4000).filter(bool))
def test_flow_composition_and_reversibility(x, p, ns, nt):
    m = TonelliModel(Torus(), CosinePotential())
    s, t = ns * H_STEP, nt * H_STEP
    x1, p1 = verlet(m, x, p, s, abs(ns))
    x2, p2 = verlet(m, x1, p1, t, abs(nt))
    xc, pc = verlet(m, x, p, s + t, abs(ns + nt)) if ns + nt else (x, p)
    if ns * nt > 0:
        assert abs(Torus().displacement(xc, x2)) < 1e-6 and abs(pc - p2) < 1e-6
    xb, pb = verlet(m, x1, p1, -s, abs(ns))
    assert abs(Torus().displacement(x, xb)) < 1e-6 and abs(pb - p) < 1e-6


def test_tabulated_matches_cosine():
    n = 64
    tab = TabulatedPotential(np.cos(2 * np.pi * np.arange(n) / n))
    xs = np.linspace(0, 1, 37)
    np.testing.assert_allclose(tab.value(xs), np.cos(2 * np.pi * xs), atol=1e-5)
    np.testing.assert_allclose(tab.grad(xs), cos_dV(xs), atol=1e-3)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_nonfinite_state_raises():
    class Blowup(CosinePotential):
        def grad(self, x):
            return np.full_like(np.asarray(x, dtype=float), np.inf)

    m = TonelliModel(Torus(), Blowup())
    with pytest.raises(IntegrationError) as exc:
        verlet(m, 0.1, 0.0, 1.0, 10)
    assert exc.value.step == 1
