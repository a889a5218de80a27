import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamlab.action import (ActionTable, action_derivatives, convexity_probe, fundamental_solution,
                           pair_results, solve_curves)
from kamlab.dynamics import CosinePotential, TonelliModel, Torus, lagrangian, legendre
from kamlab.errors import SamplingError
from oracles import cos_d2V, cos_dV, cos_V, lattice_action

# frozen from the semi-Lagrangian lattice oracle (512 x 512), see oracles.lattice_action
PENDULUM_A_0_HALF_1 = -0.3634019


def test_free_particle_values(free):
    assert fundamental_solution(free, 0.0, 0.25, 0.5).value == pytest.approx(0.0625, abs=1e-12)
    for res in (2, 9, 129):
        assert fundamental_solution(free, 0.0, 0.0, 1.0, resolution=res).value == pytest.approx(0.0, abs=1e-14)


def test_free_particle_derivatives(free):
    dx, dy, dt = action_derivatives(fundamental_solution(free, 0.0, 0.25, 0.5))
    assert (dx, dy, dt) == pytest.approx((-0.5, 0.5, -0.125), abs=1e-10)
    dx, dy, dt = action_derivatives(fundamental_solution(free, 0.3, 0.3, 0.7))
    assert (dx, dy, dt) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)


def test_rejects_bad_arguments(free):
    with pytest.raises(ValueError):
        fundamental_solution(free, 0.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        fundamental_solution(free, 0.0, 0.1, 1.0, resolution=1)


def test_pendulum_against_lattice_oracle(pendulum):
    assert fundamental_solution(pendulum, 0.0, 0.5, 1.0).value == pytest.approx(PENDULUM_A_0_HALF_1, abs=1e-3)


@pytest.mark.slow
def test_lattice_oracle_is_reproducible():
    v = lattice_action(cos_V, cos_dV, cos_d2V, 0.0, 0.5, 1.0)
    assert v == pytest.approx(PENDULUM_A_0_HALF_1, abs=1e-6)


def test_result_invariants(pendulum):
    r = fundamental_solution(pendulum, 0.1, 0.7, 0.6)
    assert abs(r.minimizer[0] - 0.1) <= 1e-10
    assert abs(Torus().displacement(r.endpoint, 0.7)) <= 1e-10
    # dual arc is the Legendre image of the discrete velocity up to O(h)
    h = r.times[1]
    vel = np.diff(r.minimizer) / h
    assert np.max(np.abs(r.dual_arc[:-1] - legendre(pendulum, r.minimizer[:-1], vel))) < 10 * h
    # no worse than the straight segment
    straight = np.linspace(r.minimizer[0], r.minimizer[-1], r.times.size)
    mid = 0.5 * (straight[1:] + straight[:-1])
    line = np.sum(h * lagrangian(pendulum, mid, np.diff(straight) / h))
    assert r.value <= line + 1e-9


def _fd(model, x, y, t, h=1e-5):
    A = lambda a, b, s: fundamental_solution(model, a, b, s).value  # noqa: E731
    return ((A(x + h, y, t) - A(x - h, y, t)) / (2 * h),
            (A(x, y + h, t) - A(x, y - h, t)) / (2 * h),
            (A(x, y, t + h) - A(x, y, t - h)) / (2 * h))


def _rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def test_pendulum_derivatives_match_finite_differences(pendulum):
    # (0, 1/2) is a tie between the two ways round the circle, so A_1(0, .) has a
    # kink there; difference the branch that was selected, with its lift held fixed
    r = fundamental_solution(pendulum, 0.0, 0.5, 1.0)
    lift = r.endpoint

    def branch(a, b, s):
        return solve_curves(pendulum, np.array([a]), np.array([b]), s, r.times.size - 1)[1][0]

    h = 1e-5
    fd = ((branch(h, lift, 1.0) - branch(-h, lift, 1.0)) / (2 * h),
          (branch(0.0, lift + h, 1.0) - branch(0.0, lift - h, 1.0)) / (2 * h),
          (branch(0.0, lift, 1.0 + h) - branch(0.0, lift, 1.0 - h)) / (2 * h))
    an = action_derivatives(r)
    assert all(_rel(a, b) <= 1e-3 for a, b in zip(an, fd))


def test_derivatives_off_the_tie(pendulum):
    an = action_derivatives(fundamental_solution(pendulum, 0.1, 0.7, 0.6))
    fd = _fd(pendulum, 0.1, 0.7, 0.6)
    assert all(_rel(a, b) <= 1e-3 for a, b in zip(an, fd))


def test_tie_point_is_a_kink(pendulum):
    fd = _fd(pendulum, 0.0, 0.5, 1.0)
    dy = action_derivatives(fundamental_solution(pendulum, 0.0, 0.5, 1.0))[1]
    assert abs(fd[1]) < 1e-6 and abs(dy) > 1.0


def test_convexity_probe_free_is_exact(free):
    r = convexity_probe(free, 0.2, 0.3, 0.1, samples=100, rng=1)
    assert r["semiconvex_const"] * 0.3 == pytest.approx(1.0, abs=1e-8)
    assert r["semiconcave_const"] * 0.3 == pytest.approx(1.0, abs=1e-8)
    assert r["max_quadratic_defect"] <= 1e-12


def test_convexity_probe_pendulum_positive(pendulum):
    r = convexity_probe(pendulum, 0.3, 0.05, 0.05, samples=200, rng=2)
    assert r["semiconvex_const"] > 0
    assert r["semiconvex_const"] <= r["semiconcave_const"]


def test_convexity_probe_needs_samples(free):
    with pytest.raises(SamplingError):
        convexity_probe(free, 0.0, 0.1, 0.1, samples=5, rng=0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True), st.floats(0.1, 1.0),
       st.integers(8, 120))
def test_dynamic_programming_principle(x, y, t, k):
    m = TonelliModel(Torus(), CosinePotential())
    r = fundamental_solution(m, x, y, t)
    s = r.times[k]
    z = float(Torus().reduce(r.minimizer[k]))
    split = fundamental_solution(m, x, z, s).value + fundamental_solution(m, z, y, t - s).value
    assert split == pytest.approx(r.value, abs=1e-4)


def test_winding_completeness(pendulum, rng):
    xs, ys = rng.uniform(0, 1, 40), rng.uniform(0, 1, 40)
    for t in (0.05, 0.5, 1.0):
        two = pair_results(pendulum, xs, ys, t, winding=2)
        three = pair_results(pendulum, xs, ys, t, winding=3)
        assert max(abs(a.value - b.value) for a, b in zip(two, three)) <= 1e-9


def test_batched_matches_single(pendulum):
    xs, ys = np.array([0.1, 0.6]), np.array([0.9, 0.2])
    batch = pair_results(pendulum, xs, ys, 0.4)
    for r, x, y in zip(batch, xs, ys):
        assert r.value == fundamental_solution(pendulum, x, y, 0.4).value


def test_table_is_thread_count_independent(pendulum):
    from kamlab import parallel
    before = parallel.get_threads()
    try:
        parallel.set_threads(1)
        a = ActionTable.build(pendulum, 64, 0.1, 1)
        parallel.set_threads(4)
        b = ActionTable.build(pendulum, 64, 0.1, 1)
    finally:
        parallel.set_threads(before)
    assert np.array_equal(a.values, b.values)
