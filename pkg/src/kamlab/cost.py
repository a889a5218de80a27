"""Dynamical transport cost C^t(mu, nu) with ground cost A_t.

The cost matrix is assembled from batched action solves, the plan from
the exact transport LP; the dual potentials certify optimality.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .action import model_key, pair_results
from .dynamics import hamiltonian
from .errors import ConvergenceError
from .measure import (DiscreteMeasure, TransportPlan, distance_matrix, geodesic_interpolate, glue,
                      optimal_plan, slackness_residual, solve_transport)

RESOLUTION = 129
FD_STEP = 1e-4
_PAIRS = {}
_PAIRS_LOCK = threading.Lock()


def _pair_key(model, x, y, t, resolution, winding):
    return (model_key(model), float(x), float(y), float(t), resolution, winding)


def action_matrix(model, mu: DiscreteMeasure, nu: DiscreteMeasure, t: float,
                  resolution: int = RESOLUTION, winding: int = 2):
    """A_t(x_i, y_j) for all atom pairs, memoized per pair."""
    n, m = mu.size, nu.size
    xs = np.repeat(mu.positions, m)
    ys = np.tile(nu.positions, n)
    keys = [_pair_key(model, x, y, t, resolution, winding) for x, y in zip(xs, ys)]
    with _PAIRS_LOCK:
        missing = [k for k, key in enumerate(keys) if key not in _PAIRS]
    if missing:
        try:
            got = pair_results(model, xs[missing], ys[missing], t, resolution, winding)
        except ConvergenceError as exc:
            raise ConvergenceError(f"dynamical cost: {exc}", best=exc.best) from exc
        with _PAIRS_LOCK:
            for k, r in zip(missing, got):
                _PAIRS.setdefault(keys[k], r)
    with _PAIRS_LOCK:
        res = [_PAIRS[key] for key in keys]
    A = np.array([r.value for r in res]).reshape(n, m)
    return A, res


def clear_pair_cache():
    with _PAIRS_LOCK:
        _PAIRS.clear()


@dataclass
class CostResult:
    value: float
    plan: TransportPlan
    per_pair: dict                  # (i, j) -> ActionResult for entries with mass
    matrix: np.ndarray
    t: float
    slackness: float
    model: object = field(default=None, repr=False)

    def to_dict(self, sup: Optional[dict] = None, slack: Optional[float] = None) -> dict:
        d = {"value": self.value, "t": self.t, "plan": self.plan.to_dict()["entries"],
             "slackness": self.slackness}
        if sup is not None:
            d["Dt"] = sup["Dt"]
        if slack is not None:
            d["slack"] = slack
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw))

    def curves_csv(self) -> str:
        lines = ["i,j,s,x"]
        for (i, j), r in sorted(self.per_pair.items()):
            for s, x in zip(r.times, r.minimizer):
                lines.append(f"{i},{j},{s!r},{float(x)!r}")
        return "\n".join(lines) + "\n"


def dynamical_cost(model, mu: DiscreteMeasure, nu: DiscreteMeasure, t: float,
                   resolution: int = RESOLUTION, winding: int = 2) -> CostResult:
    """C^t(mu, nu) = min over plans of sum mass * A_t(x_i, y_j)."""
    if not t > 0:
        raise ValueError("t must be positive")
    A, res = action_matrix(model, mu, nu, t, resolution, winding)
    G, _, (u, v) = solve_transport(A, mu.weights, nu.weights)
    plan = TransportPlan.from_dense(mu, nu, G, duals=(u, v))
    value = float(np.dot(plan.mass, A[plan.i, plan.j]))
    plan.cost = value
    m = nu.size
    per_pair = {(int(i), int(j)): res[i * m + j] for i, j in zip(plan.i, plan.j)}
    return CostResult(value, plan, per_pair, A, t, slackness_residual(A, G, u, v), model)


def displacement_interpolation(result: CostResult, s: float) -> DiscreteMeasure:
    """Law at time s of the dynamical optimal coupling."""
    t = result.t
    if not -1e-15 <= s <= t + 1e-15:
        raise ValueError(f"s={s} outside [0, {t}]")
    plan = result.plan
    if s <= 0:
        return plan.source
    if s >= t:
        return plan.target
    dom = plan.source.domain
    pos = []
    for i, j in zip(plan.i, plan.j):
        r = result.per_pair[(int(i), int(j))]
        # the dual arc equals the velocity for the mechanical Lagrangian
        curve = CubicHermiteSpline(r.times, r.minimizer, r.dual_arc)
        pos.append(float(curve(s)))
    return DiscreteMeasure(dom.reduce(np.array(pos)), plan.mass / plan.mass.sum(), dom, canonical=True)


def cost_superdifferentials(result: CostResult) -> dict:
    """Plan-averaged end momenta and the time derivative of C^t.

    p_nu(y_j) averages p_{x_i, y_j}(t) over the fiber of y_j, p_mu(x_i)
    averages p_{x_i, y_j}(0) over the fiber of x_i (-p_mu is the element of
    the superdifferential in the first slot).
    """
    plan, model = result.plan, result.model
    mu, nu = plan.source, plan.target
    p_nu = np.zeros(nu.size)
    p_mu = np.zeros(mu.size)
    Dt = 0.0
    for i, j, m in zip(plan.i, plan.j, plan.mass):
        r = result.per_pair[(int(i), int(j))]
        p0, pt = float(r.dual_arc[0]), float(r.dual_arc[-1])
        p_nu[j] += m * pt
        p_mu[i] += m * p0
        Dt -= m * float(hamiltonian(model, nu.positions[j], pt))
    with np.errstate(invalid="ignore", divide="ignore"):
        p_nu = np.where(nu.weights > 0, p_nu / nu.weights, 0.0)
        p_mu = np.where(mu.weights > 0, p_mu / mu.weights, 0.0)
    return {"p_nu": p_nu, "p_mu": p_mu, "Dt": float(Dt)}


def _support(plan):
    return set(zip(plan.i.tolist(), plan.j.tolist()))


def verify_superdifferentials(result: CostResult, h: float = FD_STEP, rel_tol: float = 5e-3,
                              abs_tol: float = 1e-6) -> dict:
    """Centered differences of C^t under atom shifts and t shifts.

    A probe whose perturbed plans change support is skipped and flagged,
    since the value function has a kink there.
    """
    model, t = result.model, result.t
    mu, nu = result.plan.source, result.plan.target
    sup = cost_superdifferentials(result)
    base = _support(result.plan)
    checks, skipped = [], []

    def probe(label, predicted, make):
        plus, minus = make(+h), make(-h)
        if _support(plus.plan) != base or _support(minus.plan) != base:
            skipped.append(label)
            return
        fd = (plus.value - minus.value) / (2 * h)
        err = abs(fd - predicted)
        ok = err <= max(rel_tol * abs(fd), abs_tol)
        checks.append({"probe": label, "predicted": float(predicted), "fd": float(fd),
                       "error": float(err), "ok": bool(ok)})

    def shifted(meas, k, d):
        x = meas.positions.copy()
        x[k] += d
        return DiscreteMeasure(x, meas.weights, meas.domain)

    for j in range(nu.size):
        probe(f"nu[{j}]", nu.weights[j] * sup["p_nu"][j],
              lambda d, j=j: dynamical_cost(model, mu, shifted(nu, j, d), t))
    for i in range(mu.size):
        probe(f"mu[{i}]", -mu.weights[i] * sup["p_mu"][i],
              lambda d, i=i: dynamical_cost(model, shifted(mu, i, d), nu, t))
    probe("t", sup["Dt"], lambda d: dynamical_cost(model, mu, nu, t + d))
    return {"checks": checks, "skipped": skipped, "all_ok": all(c["ok"] for c in checks)}


def hj_slack(model, result: CostResult, sup: Optional[dict] = None) -> float:
    """D_t C^t + sum_j nu_j H(y_j, p_nu(y_j)); non-positive by Jensen."""
    sup = cost_superdifferentials(result) if sup is None else sup
    nu = result.plan.target
    H = hamiltonian(model, nu.positions, sup["p_nu"])
    return float(sup["Dt"] + np.dot(nu.weights, H))


# ------------------------------------------------------------ regularity


def _random_measure(rng, k, box):
    lo, hi = box
    w = rng.random(k) + 0.1
    return DiscreteMeasure(rng.uniform(lo, hi, k), w / w.sum())


def regularity_probe(model, t_range, K=(0.0, 1.0), pairs: int = 100, atoms: int = 3,
                     k_list=(1, 2, 4), rng=None, budget: int = 5000) -> dict:
    """Sampled superlinearity, Lipschitz and midpoint-semiconcavity report.

    (a) C^t >= k W_1 - (c0 + theta0*(k)) t for each k.
    (b) difference quotients of (t, nu) -> C^t(mu, nu).
    (c) midpoint defect of nu -> C^t(mu, nu) along generalized geodesics
        based at mu, normalized by W_Gamma^2 / 4 (the constant C_K / t).
    """
    rng = np.random.default_rng(rng)
    g = model.growth
    report = {"superlinearity": {}, "lipschitz": {}, "semiconcavity": {}, "partial": False}
    solves = 0
    for t in t_range:
        worst = {k: (np.inf, None) for k in k_list}
        lip = (0.0, None)
        semi = (-np.inf, None)
        for _ in range(pairs):
            if solves >= budget:
                report["partial"] = True
                break
            mu, nu = _random_measure(rng, atoms, K), _random_measure(rng, atoms, K)
            c = dynamical_cost(model, mu, nu, t).value
            G1, w1, _ = solve_transport(distance_matrix(mu, nu), mu.weights, nu.weights)
            for k in k_list:
                margin = c - (k * w1 - (g.c0 + float(g.theta0_star(k))) * t)
                if margin < worst[k][0]:
                    worst[k] = (margin, {"mu": mu.to_dict(), "nu": nu.to_dict()})
            # (b) perturb t and nu together
            dt = 0.05 * t * rng.uniform(-1, 1)
            nu2 = DiscreteMeasure(nu.positions + rng.uniform(-0.02, 0.02, nu.size), nu.weights)
            c2 = dynamical_cost(model, mu, nu2, t + dt).value
            _, w12, _ = solve_transport(distance_matrix(nu, nu2), nu.weights, nu2.weights)
            q = abs(c2 - c) / (abs(dt) + w12)
            if q > lip[0]:
                lip = (q, {"t": t, "dt": dt, "mu": mu.to_dict(), "nu": nu.to_dict()})
            # (c) generalized geodesic through nu and nu3, based at mu
            nu3 = _random_measure(rng, atoms, K)
            glued = glue(optimal_plan(2, mu, nu), optimal_plan(2, mu, nu3))
            mid = geodesic_interpolate(glued, 0.5, pair=(1, 2), merge=False).measure
            d = model.domain.displacement(nu.positions[glued.idx[:, 1]], nu3.positions[glued.idx[:, 2]])
            wg2 = float(np.dot(glued.mass, np.square(d)))
            c3 = dynamical_cost(model, mu, nu3, t).value
            cm = dynamical_cost(model, mu, mid, t).value
            if wg2 > 1e-12:
                const = (0.5 * c + 0.5 * c3 - cm) / (wg2 / 4)
                if const > semi[0]:
                    semi = (const, {"t": t, "mu": mu.to_dict(), "nu0": nu.to_dict(), "nu1": nu3.to_dict()})
            solves += 5
        report["superlinearity"][t] = {k: {"worst_margin": float(worst[k][0]), "holds": bool(worst[k][0] >= -1e-9),
                                           "witness": worst[k][1]} for k in k_list}
        report["lipschitz"][t] = {"constant": float(lip[0]), "witness": lip[1]}
        report["semiconcavity"][t] = {"constant": float(semi[0]), "witness": semi[1]}
    return report
