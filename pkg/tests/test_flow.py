import numpy as np
import pytest

from kamlab.errors import AmbiguityError
from kamlab.fields import tent_field
from kamlab.flow import (continuity_residual, energy_bookkeeping, invariance_check, minimizing_movement,
                         refinement_study)
from kamlab.hopf_lax import ScalarField
from kamlab.measure import DiscreteMeasure, dirac, wasserstein
from kamlab.wasserstein_hj import argmax_measure
from oracles import cos_dV, dop853_flow, torus_gap


@pytest.fixture(scope="module")
def tent():
    return tent_field(512, 0.5, 3.0, 1.0)


def test_rejects_bad_partition(free, tent):
    with pytest.raises(ValueError):
        minimizing_movement(free, tent, dirac(0.5), 0.25, 0.1)
    with pytest.raises(ValueError):
        minimizing_movement(free, tent, dirac(0.5), 0.2, 0.0)


def test_stationary_singular_dirac(pendulum, wk):
    res = minimizing_movement(pendulum, wk, dirac(0.5), 1.0, 0.05)
    assert np.max(torus_gap(res.curve.positions, 0.5)) <= 1e-12
    rep = continuity_residual(pendulum, wk, res)
    assert rep["all_ok"]
    assert all(v["max_residual"] <= 1e-9 for v in rep["tests"].values())


def test_tent_kink_moves_at_selected_speed(free, tent):
    study = refinement_study(free, tent, dirac(0.5), 0.2, 0.02, levels=4)
    finest = study["runs"][-1]
    v = finest.summary()["mean_velocity"][0]
    assert v == pytest.approx(1.0, abs=5e-2)
    assert abs(v - 2.0) > 0.5


def test_smooth_particles_follow_characteristics(pendulum, wk):
    x0 = np.array([0.2, 0.25, 0.8])
    res = minimizing_movement(pendulum, wk, DiscreteMeasure(x0, [0.3, 0.3, 0.4]), 0.1, 0.01)
    # Du = 2 sin(pi x) on (0, 1/2), mirrored; tau(0.2) ~ 0.17 > 0.1
    p0 = np.where(x0 < 0.5, 2 * np.sin(np.pi * x0), -2 * np.sin(np.pi * (1 - x0)))
    for k, t in enumerate(res.partition):
        ref = np.array([dop853_flow(cos_dV, x, p, t)[0] if t > 0 else x for x, p in zip(x0, p0)])
        assert np.max(torus_gap(res.step_positions[k], ref)) <= 1e-3


def test_per_step_identity(pendulum, wk):
    mu0 = DiscreteMeasure([0.25, 0.5, 0.7], [0.4, 0.3, 0.3])
    res = minimizing_movement(pendulum, wk, mu0, 0.1, 0.02)
    for k in range(res.partition.size - 1):
        again = argmax_measure(pendulum, wk.u, res.step_measure(k), res.dt)
        assert again.equals(res.step_measure(k + 1), tol=0.0)


def test_curve_is_lipschitz(pendulum, wk):
    res = minimizing_movement(pendulum, wk, DiscreteMeasure([0.25, 0.5], [0.5, 0.5]), 0.2, 0.02)
    L = res.speeds().max()
    c = res.curve
    for k in range(c.times.size - 1):
        d = wasserstein(1, c.measure(k), c.measure(k + 1))
        assert d <= L * (c.times[k + 1] - c.times[k]) + 1e-12


def test_continuity_mass_conservation(free, tent):
    res = minimizing_movement(free, tent, dirac(0.5), 0.2, 0.02)
    rep = continuity_residual(free, tent, res)
    assert rep["tests"]["one"]["max_residual"] == 0.0


def test_continuity_tent(free, tent):
    res = minimizing_movement(free, tent, dirac(0.5), 0.2, 0.01)
    rep = continuity_residual(free, tent, res)
    assert rep["all_ok"], rep
    assert rep["tests"]["sin"]["max_residual"] <= 5 * 0.01 + 5e-3


def test_continuity_pendulum_mixed(pendulum, wk):
    mu0 = DiscreteMeasure([0.25, 0.5], [0.5, 0.5])
    res = minimizing_movement(pendulum, wk, mu0, 1.0, 0.01)
    rep = continuity_residual(pendulum, wk, res)
    assert rep["all_ok"], rep


def test_invariance_pendulum(pendulum, wk, cut):
    res = minimizing_movement(pendulum, wk, DiscreteMeasure([0.25, 0.5], [0.5, 0.5]), 1.0, 0.02)
    rep = invariance_check(pendulum, wk, res, data=cut)
    assert rep["all_ok"], rep["failures"][:3]
    assert all(r["singular_mass"] >= 0.5 and r["T_u"] == 0.0 for r in rep["rows"])


def test_invariance_free_is_vacuous(free, wk_free):
    res = minimizing_movement(free, wk_free, DiscreteMeasure([0.1, 0.6], [0.5, 0.5]), 0.2, 0.05)
    rep = invariance_check(free, wk_free, res)
    assert rep["all_ok"] and not rep["failures"]
    assert all(r["singular_mass"] == 0 for r in rep["rows"])


def test_invariance_skips_non_weak_kam(free, tent):
    res = minimizing_movement(free, tent, dirac(0.5), 0.1, 0.05)
    assert invariance_check(free, tent, res)["skipped"] == "not a weak KAM field"


def test_refinement_rate(free, tent):
    study = refinement_study(free, tent, DiscreteMeasure([0.3, 0.5], [0.5, 0.5]), 0.2, 0.02)
    assert np.isfinite(study["C"]) and study["C"] > 0
    for r in study["rows"]:
        assert r["max_w1"] <= study["C"] * r["dt"] + 1e-15


def test_energy_bookkeeping(pendulum, wk, free, tent):
    res = minimizing_movement(pendulum, wk, DiscreteMeasure([0.25, 0.5, 0.8], [0.3, 0.3, 0.4]), 0.2, 0.02)
    assert energy_bookkeeping(pendulum, wk, res)["ok"]
    res = minimizing_movement(free, tent, dirac(0.5), 0.2, 0.02)
    assert energy_bookkeeping(free, tent, res)["ok"]


def test_ambiguity_reports_step(free):
    phi = ScalarField.from_function(lambda x: np.cos(4 * np.pi * x), 256)
    with pytest.raises(AmbiguityError) as exc:
        minimizing_movement(free, phi, DiscreteMeasure([0.05, 0.25], [0.5, 0.5]), 0.2, 0.1)
    assert "step 0" in str(exc.value) and exc.value.index == 1
