"""Property suites of every module, run at a scenario's scale.

Each check returns a row {name, op, ok, worst, tol, witness}. A check that
raises is recorded as failed with the error text as its witness.
"""
from __future__ import annotations

import math

import numpy as np

from .action import action_derivatives, fundamental_solution, pair_results
from .cost import dynamical_cost, hj_slack
from .dynamics import hamiltonian, flow_map, legendre, legendre_inverse
from .flow import continuity_residual, minimizing_movement
from .hopf_lax import ScalarField, cut_data, evolve, kink_mask, t_minus
from .measure import (DiscreteMeasure, dirac, distance, geodesic_interpolate, glue, optimal_plan,
                      random_measure, wasserstein)
from .wasserstein_hj import measure_cut_time, p_minus, potential_energy
from .errors import KamlabError


def row(name, op, ok, worst, tol, witness=None) -> dict:
    return {"name": name, "op": op, "ok": bool(ok), "worst": _num(worst), "tol": _num(tol),
            "witness": witness}


def _num(v):
    if v is None or isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


# ------------------------------------------------------------- per module


def field_checks(name: str, field: ScalarField) -> list:
    bad = np.flatnonzero(~np.isfinite(field.values))
    wit = {"node": int(bad[0]), "x": float(field.nodes[bad[0]])} if bad.size else None
    return [row(f"fields.{name}.finite", "hopf_lax.ScalarField", bad.size == 0, bad.size, 0, wit)]


def dynamics_checks(model, rng) -> list:
    x = rng.random(20)
    p = rng.uniform(-3, 3, 20)
    xe, pe = flow_map(model, x, p, 1.0)
    drift = np.abs(hamiltonian(model, xe, pe) - hamiltonian(model, x, p))
    k = int(np.argmax(drift))
    v = rng.uniform(-3, 3, 20)
    rt = np.abs(legendre_inverse(model, x, legendre(model, x, v)) - v)
    return [
        row("dynamics.energy_conservation", "dynamics.flow_map", drift[k] <= 1e-4, drift[k], 1e-4,
            {"x": float(x[k]), "p": float(p[k])}),
        row("dynamics.legendre_roundtrip", "dynamics.legendre", rt.max() <= 1e-12, rt.max(), 1e-12),
    ]


def action_checks(model, rng, n_pairs: int = 20) -> list:
    xs, ys = rng.random(n_pairs), rng.random(n_pairs)
    t = 0.5
    fwd = np.array([r.value for r in pair_results(model, xs, ys, t)])
    bwd = np.array([r.value for r in pair_results(model, ys, xs, t)])
    asym = np.abs(fwd - bwd)
    k = int(np.argmax(asym))
    out = [row("action.reversibility", "action.fundamental_solution", asym[k] <= 1e-9, asym[k], 1e-9,
               {"x": float(xs[k]), "y": float(ys[k]), "t": t})]
    worst, wit = 0.0, None
    h = 1e-5
    for x, y, tt in zip(xs[:5], ys[:5], rng.uniform(0.2, 1.0, 5)):
        r = fundamental_solution(model, x, y, tt)
        dx, dy, dt = action_derivatives(r)
        A = lambda a, b, s: fundamental_solution(model, a, b, s).value
        fd = [(A(x + h, y, tt) - A(x - h, y, tt)) / (2 * h),
              (A(x, y + h, tt) - A(x, y - h, tt)) / (2 * h),
              (A(x, y, tt + h) - A(x, y, tt - h)) / (2 * h)]
        for a, b in zip((dx, dy, dt), fd):
            err = abs(a - b) / max(abs(b), 1e-2)
            if err > worst:
                worst, wit = err, {"x": float(x), "y": float(y), "t": float(tt)}
    out.append(row("action.derivative_identities", "action.action_derivatives", worst <= 1e-3, worst, 1e-3, wit))
    return out


def hopf_lax_checks(model, wk, data, n: int) -> list:
    out = []
    worst_t = max(wk.residuals, key=wk.residuals.get)
    worst = wk.residuals[worst_t]
    out.append(row("hopf_lax.fixed_point", "hopf_lax.weak_kam_solve", worst <= 1e-3, worst, 1e-3,
                   {"t": float(worst_t)}))
    # semigroup: one step of 2 delta against two steps of delta
    phi = ScalarField.from_function(lambda x: 0.3 * np.sin(2 * np.pi * x) + 0.1 * np.cos(6 * np.pi * x), n)
    d = wk.delta
    one = t_minus(model, phi, 2 * d)
    two = evolve(model, phi, [2 * d], -1, step=d)[-1]
    gap = np.abs(one.values - two.values)
    k = int(np.argmax(gap))
    out.append(row("hopf_lax.semigroup", "hopf_lax.t_minus", gap[k] <= 5e-3, gap[k], 5e-3,
                   {"node": k, "t": 2 * d}))
    # order preservation: psi > phi everywhere
    psi = phi + 0.05 + 0.02 * ScalarField.from_function(lambda x: np.cos(2 * np.pi * x) ** 2, n)
    lo = float(np.min(t_minus(model, psi, d).values - t_minus(model, phi, d).values))
    out.append(row("hopf_lax.order_preserving", "hopf_lax.t_minus", lo >= -1e-12, lo, -1e-12))
    # singular nodes have zero cut time
    sing = np.flatnonzero(data.sing_mask)
    bad = sing[data.tau.values[sing] != 0.0]
    out.append(row("hopf_lax.singular_implies_cut", "hopf_lax.cut_data", bad.size == 0, bad.size, 0,
                   {"nodes": bad.tolist()} if bad.size else None))
    kinks = kink_mask(wk.u)
    out.append(row("hopf_lax.semiconcave_kinks", "hopf_lax.kink_mask",
                   bool(np.all(wk.u.jumps()[kinks] < 0)), int(np.sum(wk.u.jumps()[kinks] >= 0)), 0))
    return out


def measure_checks(rng, instances: int = 100) -> list:
    tri, dirac_err, speed = 0.0, 0.0, 0.0
    tri_w = dirac_w = speed_w = None
    glue_err = 0.0
    for _ in range(instances):
        k = rng.integers(1, 6, 3)
        a, b, c = (random_measure(int(m), rng) for m in k)
        for p in (1, 2):
            excess = wasserstein(p, a, c) - wasserstein(p, a, b) - wasserstein(p, b, c)
            if excess > tri:
                tri, tri_w = excess, {"p": p, "mu": a.to_dict(), "nu": b.to_dict(), "rho": c.to_dict()}
        x, y = rng.random(2)
        e = abs(wasserstein(2, dirac(x), dirac(y)) - float(distance(a.domain, x, y)))
        if e > dirac_err:
            dirac_err, dirac_w = e, {"x": float(x), "y": float(y)}
        plan = optimal_plan(2, a, b)
        W = wasserstein(2, a, b)
        lam = float(rng.uniform(0.1, 0.9))
        interp = geodesic_interpolate(plan, lam)
        if not interp.flagged:
            m = interp.measure
            e = max(abs(wasserstein(2, a, m) - lam * W), abs(wasserstein(2, m, b) - (1 - lam) * W))
            if e > speed:
                speed, speed_w = e, {"mu": a.to_dict(), "nu": b.to_dict(), "lambda": lam}
        g = glue(plan, optimal_plan(2, a, c))
        glue_err = max(glue_err, float(np.abs(g.projection(0, 1) - plan.dense()).max()),
                       float(np.abs(g.projection(0, 2).sum(axis=0) - c.weights).max()))
    return [
        row("measure.triangle_inequality", "measure.wasserstein", tri <= 1e-9, tri, 1e-9, tri_w),
        row("measure.dirac_distance", "measure.wasserstein", dirac_err <= 1e-12, dirac_err, 1e-12, dirac_w),
        row("measure.geodesic_constant_speed", "measure.geodesic_interpolate", speed <= 1e-9, speed, 1e-9, speed_w),
        row("measure.glue_projections", "measure.glue", glue_err <= 1e-12, glue_err, 1e-12),
    ]


def cost_checks(model, rng, instances: int = 5) -> list:
    worst, wit = -np.inf, None
    marg = 0.0
    for _ in range(instances):
        mu, nu = random_measure(3, rng), random_measure(3, rng)
        t = float(rng.uniform(0.2, 1.0))
        res = dynamical_cost(model, mu, nu, t)
        s = hj_slack(model, res)
        if s > worst:
            worst, wit = s, {"mu": mu.to_dict(), "nu": nu.to_dict(), "t": t}
        marg = max(marg, res.plan.marginal_error())
    return [
        row("cost.hj_inequality", "cost.hj_slack", worst <= 1e-9, worst, 1e-9, wit),
        row("cost.plan_marginals", "cost.dynamical_cost", marg <= 1e-10, marg, 1e-10),
    ]


def measure_hj_checks(model, wk, data, rng, instances: int = 10) -> list:
    agree, agree_w = 0.0, None
    ok_all = True
    fixed, fixed_w = 0.0, None
    for _ in range(instances):
        mu = random_measure(int(rng.integers(1, 5)), rng)
        rep = measure_cut_time(model, wk, mu, data=data, check=False)
        vals = list(rep.by_formula.values())
        finite = [v for v in vals if not math.isinf(v)]
        if finite and len(finite) != len(vals):
            ok_all = False
            agree_w = {"mu": mu.to_dict(), "values": rep.to_dict()["by_formula"]}
        elif finite:
            spread = max(finite) - min(finite)
            if spread > agree:
                agree = spread
                if spread > rep.tolerance:
                    ok_all = False
                    agree_w = {"mu": mu.to_dict(), "values": rep.to_dict()["by_formula"]}
        for t in (0.1, 0.5, 1.0):
            e = abs(p_minus(model, wk.u, mu, t) + wk.c0 * t - potential_energy(wk.u, mu))
            if e > fixed:
                fixed, fixed_w = e, {"mu": mu.to_dict(), "t": t}
    return [
        row("wasserstein_hj.cut_time_formulas", "wasserstein_hj.measure_cut_time", ok_all, agree,
            "max(probe spacing, 5e-3)", agree_w),
        row("wasserstein_hj.fixed_point", "wasserstein_hj.p_minus", fixed <= 5e-3, fixed, 5e-3, fixed_w),
    ]


def flow_checks(model, wk, mu, dt: float = 0.01, T: float = 0.5) -> list:
    # coarse grids need a step long enough for the search to reach one cell
    t_min = wk.u.dx / model.lambda_phi(wk.u.lipschitz())
    dt = T / math.floor(T / max(dt, t_min))
    res = minimizing_movement(model, wk, mu, T, dt)
    cr = continuity_residual(model, wk, res)
    worst = max(v["max_residual"] for v in cr["tests"].values())
    name = max(cr["tests"], key=lambda k: cr["tests"][k]["max_residual"])
    return [row("flow.continuity_residual", "flow.continuity_residual", cr["all_ok"], worst,
                cr["tolerance"], {"test": name, "t": cr["tests"][name]["worst_time"],
                                  "skipped": cr["skipped"]})]


def guarded(name, fn, *args, **kw) -> list:
    try:
        return fn(*args, **kw)
    except (KamlabError, ValueError, FloatingPointError) as exc:
        return [row(name, name, False, None, None, {"error": f"{type(exc).__name__}: {exc}"})]


def run_suite(model, wk, fields: dict, rng, n: int, flow_measure=None) -> list:
    """All module suites; ``fields`` maps names to ScalarFields to audit."""
    rows = []
    for name, f in fields.items():
        rows += field_checks(name, f)
    rows += guarded("dynamics", dynamics_checks, model, rng)
    rows += guarded("action", action_checks, model, rng)
    data = guarded("hopf_lax.cut_data", lambda: cut_data(model, wk))
    if isinstance(data, list):
        rows += data
    else:
        rows += guarded("hopf_lax", hopf_lax_checks, model, wk, data, n)
    rows += guarded("measure", measure_checks, rng)
    rows += guarded("cost", cost_checks, model, rng)
    if not isinstance(data, list):
        rows += guarded("wasserstein_hj", measure_hj_checks, model, wk, data, rng)
    mu = flow_measure if flow_measure is not None else DiscreteMeasure([0.25, 0.5], [0.5, 0.5])
    rows += guarded("flow", flow_checks, model, wk, mu)
    return rows


def table(rows) -> str:
    w = max(len(r["name"]) for r in rows) if rows else 10
    lines = [f"{'invariant':<{w}}  status  worst          witness"]
    for r in rows:
        status = "pass" if r["ok"] else "FAIL"
        worst = r["worst"]
        ws = f"{worst:<13.4g}" if isinstance(worst, float) else f"{str(worst):<13}"
        lines.append(f"{r['name']:<{w}}  {status:<6}  {ws}  {_short(r['witness'])}")
    return "\n".join(lines)


def _short(w, limit: int = 90) -> str:
    if w is None:
        return "-"
    s = str(w)
    return s if len(s) <= limit else s[: limit - 3] + "..."
