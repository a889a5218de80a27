import math

import numpy as np
import pytest

from kamlab.action import pair_results
from kamlab.errors import AmbiguityError
from kamlab.fields import quadratic_field, tent_field
from kamlab.hopf_lax import ScalarField, cut_time, probe_spacing, t_minus
from kamlab.measure import DiscreteMeasure, dirac, potential_energy, random_measure, uniform_cloud, wasserstein
from kamlab.wasserstein_hj import (argmax_measure, classify_measure, measure_cut_time, p_minus, p_plus,
                                   viscosity_check)
from oracles import brute_p_minus, pendulum_tau

TAU_QUARTER = 0.14027


def test_dirac_reduction(pendulum):
    phi = tent_field(256, 0.5)
    for x in (0.1, 0.5, 0.77):
        assert p_minus(pendulum, phi, dirac(x), 0.2) == t_minus(pendulum, phi, 0.2)(x)


def test_time_zero_is_potential_energy(pendulum, rng):
    phi = tent_field(256, 0.5)
    mu = random_measure(4, rng)
    assert p_minus(pendulum, phi, mu, 0.0) == potential_energy(phi, mu)
    assert p_plus(pendulum, phi, mu, 0.0) == potential_energy(phi, mu)


def test_constant_field_free(free, rng):
    phi = ScalarField(np.full(128, 0.4))
    mu = random_measure(3, rng)
    assert p_minus(free, phi, mu, 0.3) == pytest.approx(0.4, abs=1e-12)
    assert p_plus(free, phi, mu, 0.3) == pytest.approx(0.4, abs=1e-12)


def test_p_minus_against_brute_force(pendulum):
    n, t = 128, 0.2
    phi = tent_field(n, 0.3)
    mu = DiscreteMeasure([0.2, 0.65], [0.35, 0.65])
    def action(ys, x):
        return np.array([r.value for r in pair_results(pendulum, ys, np.full(n, x), t)])

    ref = brute_p_minus(phi.values, action, mu.positions, mu.weights)
    assert p_minus(pendulum, phi, mu, t) == pytest.approx(ref, abs=2e-3)


def test_argmax_examples(free, pendulum, wk):
    phi = quadratic_field(512, 0.0, -1.0)
    nu = argmax_measure(free, phi, dirac(0.2), 0.1)
    assert nu.positions[0] == pytest.approx(1.0 / 6.0, abs=2.0 / 512)
    for t in (0.02, 0.05, 0.1):
        assert argmax_measure(pendulum, wk.u, dirac(0.5), t).positions[0] == pytest.approx(0.5, abs=1.0 / 512)


def _fit_through_origin(t, w):
    t, w = np.asarray(t), np.asarray(w)
    slope = float(np.dot(t, w) / np.dot(t, t))
    ss = np.sum((w - w.mean()) ** 2)
    return slope, 1.0 - np.sum((w - slope * t) ** 2) / ss


def test_argmax_converges_linearly(pendulum, wk):
    mu = DiscreteMeasure([0.1, 0.3, 0.8], [0.2, 0.5, 0.3])
    ts = [0.02, 0.04, 0.08]
    w1 = [wasserstein(1, argmax_measure(pendulum, wk.u, mu, t), mu) for t in ts]
    slope, r2 = _fit_through_origin(ts, w1)
    assert slope > 0 and r2 >= 0.99


def test_argmax_ambiguity_names_atom(free):
    # the second atom sits at a strict minimum of phi, symmetric between two
    # maxima: for t beyond 1 / phi'' it can leave either way at equal profit
    phi = ScalarField.from_function(lambda x: np.cos(4 * np.pi * x), 256)
    with pytest.raises(AmbiguityError) as exc:
        argmax_measure(free, phi, DiscreteMeasure([0.05, 0.25], [0.5, 0.5]), 0.1)
    assert exc.value.index == 1


def test_measure_cut_time_examples(pendulum, wk, cut, free, wk_free):
    rep = measure_cut_time(pendulum, wk, dirac(0.25), data=cut)
    assert rep.T_u == pytest.approx(TAU_QUARTER, abs=max(probe_spacing(cut.t_grid, TAU_QUARTER), 5e-3))
    assert rep.T_u == cut_time(pendulum, wk, 0.25, data=cut)
    rep = measure_cut_time(pendulum, wk, DiscreteMeasure([0.25, 0.5], [0.5, 0.5]), data=cut)
    assert rep.T_u == 0.0 and set(rep.by_formula.values()) == {0.0}
    rep = measure_cut_time(free, wk_free, random_measure(4, np.random.default_rng(0)))
    assert rep.infinite and all(math.isinf(v) for v in rep.by_formula.values())


def test_measure_cut_time_min_over_atoms(pendulum, wk, cut, rng):
    for _ in range(5):
        mu = random_measure(4, rng)
        rep = measure_cut_time(pendulum, wk, mu, data=cut)
        assert rep.T_u == pytest.approx(min(rep.witnesses), abs=rep.tolerance)
        ref = min(pendulum_tau(x) for x in mu.positions)
        assert rep.T_u == pytest.approx(ref, abs=max(probe_spacing(cut.t_grid, ref), 5e-3))


def test_classification(pendulum, wk, cut):
    c = classify_measure(pendulum, wk, dirac(0.5), data=cut)
    assert c["class"] == "singular" and c["cut"]
    # 64 atoms at cell centres (k + 1/2) / 64; the closest to 1/2 sits 1/128 away
    cloud = DiscreteMeasure((np.arange(64) + 0.5) / 64, np.full(64, 1 / 64))
    c = classify_measure(pendulum, wk, cloud, data=cut)
    assert c["class"] == "regular" and c["T_u"] > 0
    ref = min(pendulum_tau(x) for x in cloud.positions)
    assert c["T_u"] == pytest.approx(ref, abs=max(probe_spacing(cut.t_grid, ref), 5e-3))
    c = classify_measure(pendulum, wk, DiscreteMeasure([0.25, 0.5], [0.5, 0.5]), data=cut)
    assert c["singular"] and c["cut"] and c["singular_mass"] == pytest.approx(0.5)


def test_fixed_point_on_random_measures(pendulum, wk, rng):
    for _ in range(20):
        mu = random_measure(3, rng)
        for t in (0.1, 0.5, 1.0):
            assert abs(p_minus(pendulum, wk.u, mu, t) + wk.c0 * t - potential_energy(wk.u, mu)) <= 5e-3


def test_commutator_order_and_idempotence(pendulum, rng):
    phi = tent_field(256, 0.5)
    for _ in range(5):
        mu = random_measure(3, rng)
        t = 0.2
        e = potential_energy(phi, mu)
        minus = t_minus(pendulum, phi, t)
        from kamlab.hopf_lax import t_plus
        plus = t_plus(pendulum, phi, t)
        assert p_plus(pendulum, minus, mu, t) <= e + 5e-3
        assert e <= p_minus(pendulum, plus, mu, t) + 5e-3
        again = p_plus(pendulum, t_minus(pendulum, plus, t), mu, t)
        assert again == pytest.approx(p_plus(pendulum, phi, mu, t), abs=5e-3)


def test_cut_measures_propagate_to_singular(pendulum, wk, cut):
    mu = DiscreteMeasure([0.25, 0.5], [0.5, 0.5])
    assert classify_measure(pendulum, wk, mu, data=cut)["cut"]
    for t in (0.02, 0.05, 0.1):
        nu = argmax_measure(pendulum, wk.u, mu, t)
        assert classify_measure(pendulum, wk, nu, data=cut)["singular"]


def test_viscosity_free_quadratic(free):
    phi = quadratic_field(512, 0.0, 1.0)
    samples = [(0.1, DiscreteMeasure([0.1, 0.2], [0.5, 0.5])), (0.2, dirac(0.3))]
    rep = viscosity_check(free, phi, samples)
    assert rep["all_ok"] and rep["max_residual"] <= 5e-3


def test_viscosity_pendulum_stationary(pendulum, wk):
    samples = [(0.1, DiscreteMeasure([0.1, 0.3, 0.7], [0.2, 0.3, 0.5])), (0.2, dirac(0.2))]
    rep = viscosity_check(pendulum, wk.u, samples, wk=wk)
    assert rep["stationary_ok"]


def test_viscosity_skips_kinks(pendulum, wk):
    rep = viscosity_check(pendulum, wk.u, [(0.1, dirac(0.5))])
    assert rep["samples"][0]["skipped"]


def test_generated_cloud_is_regular(pendulum, wk, cut):
    cloud = uniform_cloud(16, np.random.default_rng(4), avoid=[0.5], margin=0.02)
    assert classify_measure(pendulum, wk, cloud, data=cut)["class"] == "regular"
