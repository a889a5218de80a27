import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamlab.dynamics import Torus
from kamlab.errors import ValidationError
from kamlab.fields import quadratic_field
from kamlab.hopf_lax import ScalarField, kink_mask
from kamlab.measure import (DiscreteMeasure, TransportPlan, dirac, geodesic_interpolate, glue,
                            is_singular, local_superdifferential_check, optimal_plan, potential_energy,
                            pushforward, random_measure, uniform_cloud, wasserstein)
from oracles import torus_gap

atoms = st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=6)


def measure_from(xs, seed):
    w = np.random.default_rng(seed).random(len(xs)) + 0.1
    return DiscreteMeasure(xs, w / w.sum())


def brute_w1(mu, nu):
    """Vertices of the transport polytope are enumerated for tiny supports."""
    if mu.size == 1:
        return float(np.dot(nu.weights, torus_gap(mu.positions[0], nu.positions)))
    raise NotImplementedError


def test_measure_invariants():
    with pytest.raises(ValueError):
        DiscreteMeasure([0.1, 0.2], [0.6, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure([np.nan], [1.0])
    mu = DiscreteMeasure([0.3, 0.3 + 1e-12, 0.7], [0.25, 0.25, 0.5], canonical=True)
    assert mu.size == 2 and mu.weights.tolist() == [0.5, 0.5]


def test_serialization_round_trip(rng):
    mu = random_measure(7, rng)
    assert DiscreteMeasure.from_csv(mu.to_csv()).equals(mu)
    assert DiscreteMeasure.from_json(mu.to_json()).equals(mu)


def test_wasserstein_examples(rng):
    for p in (1, 2):
        assert wasserstein(p, dirac(0.1), dirac(0.9)) == pytest.approx(0.2, abs=1e-12)
    nu = DiscreteMeasure([0.25, 0.75], [0.5, 0.5])
    assert wasserstein(1, dirac(0.0), nu) == pytest.approx(0.25, abs=1e-12)
    assert wasserstein(1, dirac(0.0), nu) == pytest.approx(brute_w1(dirac(0.0), nu), abs=1e-12)
    mu = random_measure(9, rng)
    assert wasserstein(2, mu, mu) == pytest.approx(0.0, abs=1e-9)


def test_plan_marginals(rng):
    mu, nu = random_measure(6, rng), random_measure(4, rng)
    plan = optimal_plan(2, mu, nu)
    G = plan.dense()
    assert np.max(np.abs(G.sum(1) - mu.weights)) <= 1e-10
    assert np.max(np.abs(G.sum(0) - nu.weights)) <= 1e-10
    assert np.all(G >= 0)


def test_plan_rejects_bad_marginals():
    mu = DiscreteMeasure([0.1, 0.2], [0.5, 0.5])
    with pytest.raises(ValidationError):
        TransportPlan(mu, mu, np.array([0]), np.array([0]), np.array([1.0])).validate()
    with pytest.raises(ValidationError):
        TransportPlan(mu, mu, np.array([0, 1]), np.array([0, 1]), np.array([1.5, -0.5]))


def test_pushforward_examples(rng):
    mu = random_measure(5, rng)
    assert pushforward(mu, lambda x: x).equals(mu.canonical())
    assert pushforward(dirac(0.75), lambda x: x + 0.5).equals(dirac(0.25), tol=1e-15)
    one = pushforward(mu, lambda x: np.full_like(x, 0.4))
    assert one.size == 1 and one.weights[0] == pytest.approx(1.0, abs=1e-15)
    f = lambda x: np.cos(3 * x)  # noqa: E731
    m = lambda x: x ** 2  # noqa: E731
    assert pushforward(mu, m).integrate(f) == pytest.approx(mu.integrate(lambda x: f(m(x))), abs=1e-14)


def test_glue_examples(rng):
    mu = dirac(0.3)
    nu, rho = random_measure(3, rng), random_measure(2, rng)
    g = glue(optimal_plan(2, mu, nu), optimal_plan(2, mu, rho))
    assert np.allclose(g.projection(1, 2), np.outer(nu.weights, rho.weights), atol=1e-14)
    mu = random_measure(4, rng)
    ident = optimal_plan(2, mu, mu)
    g = glue(ident, ident)
    assert np.all(g.idx[:, 0] == g.idx[:, 1]) and np.all(g.idx[:, 1] == g.idx[:, 2])


def test_glue_projections_exact(rng):
    mu = DiscreteMeasure([0.1, 0.6], [0.3, 0.7])
    for _ in range(5):
        p1 = optimal_plan(2, mu, random_measure(3, rng))
        p2 = optimal_plan(1, mu, random_measure(4, rng))
        g = glue(p1, p2)
        np.testing.assert_allclose(g.projection(0, 1), p1.dense(), atol=1e-15)
        np.testing.assert_allclose(g.projection(0, 2), p2.dense(), atol=1e-15)


def test_glue_rejects_foreign_source(rng):
    a, b = random_measure(2, rng), random_measure(2, rng)
    with pytest.raises(ValidationError):
        glue(optimal_plan(2, a, b), optimal_plan(2, b, a))


def test_geodesic_examples(rng):
    plan = optimal_plan(2, dirac(0.0), dirac(0.2))
    assert geodesic_interpolate(plan, 0.5).measure.positions[0] == pytest.approx(0.1, abs=1e-15)
    mu, nu = random_measure(5, rng), random_measure(3, rng)
    plan = optimal_plan(2, mu, nu)
    assert geodesic_interpolate(plan, 0.0).measure.equals(mu.canonical(), tol=1e-15)
    assert geodesic_interpolate(plan, 1.0).measure.equals(nu.canonical(), tol=1e-15)
    total = wasserstein(2, mu, nu)
    for lam in (0.2, 0.5, 0.9):
        mid = geodesic_interpolate(plan, lam).measure
        assert wasserstein(2, mu, mid) == pytest.approx(lam * total, abs=1e-8)


def test_geodesic_antipodal_flag():
    plan = optimal_plan(2, dirac(0.1), dirac(0.6))
    out = geodesic_interpolate(plan, 0.5)
    assert out.flagged and out.measure.positions[0] == pytest.approx(0.35)


def test_potential_energy():
    c = ScalarField(np.full(64, 0.3))
    assert potential_energy(c, DiscreteMeasure([0.1, 0.8], [0.4, 0.6])) == pytest.approx(0.3, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(atoms, st.floats(-2, 2), st.floats(-2, 2))
def test_potential_energy_linear(xs, a, b):
    mu = measure_from(xs, 0)
    phi = ScalarField.from_function(lambda x: np.sin(2 * np.pi * x), 64)
    psi = quadratic_field(64, 0.3)
    lhs = potential_energy(phi * a + psi * b, mu)
    assert lhs == pytest.approx(a * potential_energy(phi, mu) + b * potential_energy(psi, mu), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(atoms, atoms, atoms, st.sampled_from([1, 2]))
def test_triangle_inequality(a, b, c, p):
    mu, nu, rho = measure_from(a, 1), measure_from(b, 2), measure_from(c, 3)
    assert wasserstein(p, mu, rho) <= wasserstein(p, mu, nu) + wasserstein(p, nu, rho) + 1e-10


def test_local_superdifferential_check(pendulum, wk):
    mu = DiscreteMeasure([0.1, 0.3], [0.5, 0.5])
    phi = ScalarField.from_function(lambda x: np.sin(2 * np.pi * x), 512)
    alpha = 2 * np.pi * np.cos(2 * np.pi * mu.positions)
    assert local_superdifferential_check(phi, mu, alpha, trials=60, rng=np.random.default_rng(0))["all_pass"]
    # at the kink of u: slope 2 is an extreme of the hull, 2.5 is outside
    ok = local_superdifferential_check(wk.u, dirac(0.5), [2.0], trials=100, rng=np.random.default_rng(1))
    bad = local_superdifferential_check(wk.u, dirac(0.5), [2.5], trials=100, rng=np.random.default_rng(1))
    assert ok["all_pass"]
    assert not bad["all_pass"]
    witness = DiscreteMeasure(**{k: np.array(v) for k, v in bad["worst_witness"].items()})
    # alpha = 2.5 exceeds the left slope 2, so moving mass left breaks the inequality
    assert np.dot(witness.weights, Torus().displacement(0.5, witness.positions)) < 0


def test_singularity_criterion(wk):
    mask = kink_mask(wk.u)
    assert is_singular(mask, wk.u, dirac(0.5))
    assert is_singular(mask, wk.u, DiscreteMeasure([0.1, 0.5], [0.9, 0.1]))
    assert not is_singular(mask, wk.u, DiscreteMeasure([0.1, 0.3, 0.7], [0.2, 0.3, 0.5]))


def test_generators_are_seeded():
    a = uniform_cloud(5, np.random.default_rng(3))
    b = uniform_cloud(5, np.random.default_rng(3))
    assert a.equals(b)
    assert np.allclose(a.weights, 0.2)
