"""kamlab command line: run scenarios, audit invariants, print the config schema.

Exit codes: 0 all embedded assertions pass, 1 an assertion failed or a
module raised, 2 the config is invalid.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import traceback

import numpy as np

from . import __version__, invariants, plotting
from .config import SCHEMA, ScenarioConfig, load
from .cost import cost_superdifferentials, dynamical_cost, hj_slack, verify_superdifferentials
from .errors import AmbiguityError, ConfigError, KamlabError
from .fields import quadratic_field, tent_field
from .flow import (continuity_residual, energy_bookkeeping, invariance_check, minimizing_movement,
                   refinement_study)
from .hopf_lax import (ScalarField, WeakKamSolution, critical_value, cut_data, cut_time, kink_mask,
                       probe_spacing, resolvable_t_grid, weak_kam_solve)
from .measure import wasserstein
from .parallel import ordered_map, set_threads
from .wasserstein_hj import (argmax_measure, classify_measure, commutator_data, measure_cut_time, p_minus,
                             potential_energy)

log = logging.getLogger("kamlab")


def claim(value, op: str, tol=None, ok=None, **extra) -> dict:
    """A reported number with the operation that produced it and its tolerance."""
    d = {"value": _enc(value), "op": op}
    if tol is not None:
        d["tol"] = _enc(tol)
    if ok is not None:
        d["ok"] = bool(ok)
    d.update(extra)
    return d


def _enc(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_enc(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def _clean(obj):
    """Recursively make an object JSON safe (numpy scalars, inf)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return _enc(obj)


class Context:
    """Lazily computed shared state of one scenario run."""

    def __init__(self, cfg: ScenarioConfig, base_dir: str):
        self.cfg = cfg
        self.base_dir = base_dir
        self.model = cfg.model()
        self.measures = cfg.measures()
        self._wk = None
        self._cv = None
        self._cut = {}
        self._fields = {}

    @property
    def out(self) -> str:
        return self.cfg.out_dir

    def critical(self):
        if self._cv is None:
            self._cv = critical_value(self.model, n=self.cfg.N, delta=self.cfg.delta)
        return self._cv

    def weak_kam(self) -> WeakKamSolution:
        if self._wk is None:
            self._wk = weak_kam_solve(self.model, delta=self.cfg.delta, tol=self.cfg.wk_tol,
                                      n=self.cfg.N, c0=self.critical().value)
        return self._wk

    def cut(self, t_grid=None):
        key = tuple(resolvable_t_grid(self.model, self.weak_kam().u) if t_grid is None else t_grid)
        if key not in self._cut:
            self._cut[key] = cut_data(self.model, self.weak_kam(), np.array(key))
        return self._cut[key]

    def field(self, name: str):
        """ScalarField or WeakKamSolution for a configured field name."""
        if name == "weak-kam":
            return self.weak_kam()
        if name in self._fields:
            return self._fields[name]
        spec = self.cfg.raw["fields"][name]
        kind, n = spec["kind"], self.cfg.N
        if kind == "weak-kam":
            f = self.weak_kam()
        elif kind == "tent":
            f = tent_field(n, spec.get("x0", 0.5), spec.get("left", 3.0), spec.get("right", 1.0))
        elif kind == "quadratic":
            f = quadratic_field(n, spec.get("center", 0.0), spec.get("scale", 1.0))
        else:
            path = spec["path"]
            if not os.path.isabs(path):
                path = os.path.join(self.base_dir, path)
            with open(path) as fh:
                f = ScalarField.from_csv(fh.read())
        self._fields[name] = f
        return f

    def write(self, name: str, text: str) -> str:
        with open(os.path.join(self.out, name), "w") as fh:
            fh.write(text)
        return name

    def figure(self, fig, stem: str) -> list:
        return plotting.save(fig, os.path.join(self.out, stem), self.cfg.formats)


def _as_field(f):
    return f.u if isinstance(f, WeakKamSolution) else f


def _fit_origin(t, w):
    """Least-squares slope through the origin and its R^2 (centered)."""
    t, w = np.asarray(t, float), np.asarray(w, float)
    C = float(np.dot(t, w) / np.dot(t, t))
    ss_res = float(np.sum((w - C * t) ** 2))
    ss_tot = float(np.sum((w - w.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return C, r2


# ------------------------------------------------------------ experiments


def exp_weak_kam(ctx: Context, opts: dict, tag: str):
    cv = ctx.critical()
    wk = ctx.weak_kam()
    u = wk.u
    kinks = kink_mask(u)
    m = {
        "c0": claim(wk.c0, "hopf_lax.critical_value", 1e-3, spread=_enc(cv.spread)),
        "iterations": claim(wk.iterations, "hopf_lax.weak_kam_solve"),
        "converged": claim(wk.converged, "hopf_lax.weak_kam_solve", ok=wk.converged),
        "fixed_point_residual": {f"{t:g}": claim(r, "hopf_lax.fixed_point_residual", 1e-3, ok=r <= 1e-3)
                                 for t, r in sorted(wk.residuals.items())},
        "field": {
            "min": claim(u.values.min(), "hopf_lax.weak_kam_solve"),
            "max": claim(u.values.max(), "hopf_lax.weak_kam_solve"),
            "lipschitz": claim(u.lipschitz(), "hopf_lax.ScalarField.lipschitz"),
            "semiconcavity": claim(u.semiconcavity(), "hopf_lax.ScalarField.semiconcavity"),
            "kink_nodes": claim(np.flatnonzero(kinks).tolist(), "hopf_lax.kink_mask"),
        },
    }
    ok = wk.converged and all(r <= 1e-3 for r in wk.residuals.values())
    arts = []
    if "csv" in ctx.cfg.formats:
        arts.append(ctx.write(f"{tag}_u.csv", u.to_csv()))
    arts += ctx.figure(plotting.field_figure(u, kinks, f"weak KAM solution, c0 = {wk.c0:.6f}"), f"{tag}_u")
    return m, ok, arts


def exp_cut_report(ctx: Context, opts: dict, tag: str):
    tg = ctx.cfg.times(opts.get("times"), resolvable_t_grid(ctx.model, ctx.weak_kam().u))
    data = ctx.cut(tg)
    wk = ctx.weak_kam()
    s = data.summary()
    m = {"tol_B": claim(data.tol_B, "hopf_lax.tolerance_B"),
         "singular_nodes": claim(s["sing_nodes"], "hopf_lax.cut_data"),
         "tau_stats": {k: claim(v, "hopf_lax.cut_data") for k, v in s["tau_stats"].items()},
         "points": {}, "measures": {}}
    ok = True
    for x in opts.get("points", []):
        tau = cut_time(ctx.model, wk, x, data=data)
        tol = max(probe_spacing(data.t_grid, tau), 5e-3)
        m["points"][f"{x:g}"] = claim(tau, "hopf_lax.cut_time", tol)

    if opts.get("measures"):
        # shared by every measure; build it once before fanning out
        commutator_data(ctx.model, wk, data.t_grid)

    def one(name):
        mu = ctx.measures[name]
        rep = measure_cut_time(ctx.model, wk, mu, data=data, check=False)
        cls = None
        try:
            cls = classify_measure(ctx.model, wk, mu, data=data)
        except KamlabError as exc:
            cls = {"error": str(exc)}
        return name, rep, cls

    for name, rep, cls in ordered_map(one, opts.get("measures", [])):
        vals = list(rep.by_formula.values())
        agree = all((math.isinf(a) and math.isinf(b)) or abs(a - b) <= rep.tolerance + 1e-12
                    for a in vals for b in vals)
        ok &= agree and "error" not in cls
        m["measures"][name] = {
            "T_u": claim(rep.T_u, "wasserstein_hj.measure_cut_time", rep.tolerance),
            "by_formula": {k: claim(v, "wasserstein_hj.measure_cut_time", rep.tolerance)
                           for k, v in rep.by_formula.items()},
            "formulas_agree": claim(agree, "wasserstein_hj.measure_cut_time", rep.tolerance, ok=agree),
            "class": _clean(cls),
        }
    arts = []
    if "csv" in ctx.cfg.formats:
        arts.append(ctx.write(f"{tag}_cut.csv", data.to_csv()))
    arts += ctx.figure(plotting.cut_figure(data), f"{tag}_cut")
    return m, ok, arts


def exp_cost(ctx: Context, opts: dict, tag: str):
    mu, nu = ctx.measures[opts["source"]], ctx.measures[opts["target"]]
    verify = opts.get("verify", True)
    m, ok, arts = {}, True, []
    for t in ctx.cfg.times(opts.get("times"), [1.0]):
        res = dynamical_cost(ctx.model, mu, nu, t)
        sup = cost_superdifferentials(res)
        slack = hj_slack(ctx.model, res, sup)
        row = {
            "value": claim(res.value, "cost.dynamical_cost", 1e-10, slackness=_enc(res.slackness)),
            "plan": claim(res.plan.to_dict()["entries"], "measure.solve_transport"),
            "Dt": claim(sup["Dt"], "cost.cost_superdifferentials"),
            "hj_slack": claim(slack, "cost.hj_slack", 1e-9, ok=slack <= 1e-9),
        }
        ok &= slack <= 1e-9
        if verify:
            v = verify_superdifferentials(res)
            row["finite_differences"] = claim(v["all_ok"], "cost.verify_superdifferentials", 5e-3,
                                              ok=v["all_ok"], checks=_clean(v["checks"]),
                                              skipped=v["skipped"])
            ok &= v["all_ok"]
        m[f"{t:g}"] = row
        if "csv" in ctx.cfg.formats:
            arts.append(ctx.write(f"{tag}_curves_t{t:g}.csv", res.curves_csv()))
        arts += ctx.figure(plotting.curves_figure(res), f"{tag}_curves_t{t:g}")
    return m, ok, arts


def exp_propagate(ctx: Context, opts: dict, tag: str):
    fname = opts.get("field", "weak-kam")
    phi = ctx.field(fname)
    is_wk = isinstance(phi, WeakKamSolution)
    times = ctx.cfg.times(opts.get("times"), [0.02, 0.04, 0.08])
    names = opts.get("measures", [])
    data = ctx.cut() if is_wk else None
    m, ok, arts = {}, True, []
    lines = ["measure,t,w1," + "atom,x"]
    for name in names:
        mu = ctx.measures[name]
        row = {"images": {}, "w1": {}}
        try:
            nus = ordered_map(lambda t: argmax_measure(ctx.model, phi, mu, t), times)
        except AmbiguityError as exc:
            row["error"] = {"type": "AmbiguityError", "message": str(exc), "atom": exc.index}
            m[name] = row
            ok = False
            continue
        w1 = [wasserstein(1, nu, mu) for nu in nus]
        for t, nu, w in zip(times, nus, w1):
            row["images"][f"{t:g}"] = claim(nu.to_dict(), "wasserstein_hj.argmax_measure")
            row["w1"][f"{t:g}"] = claim(w, "measure.wasserstein")
            for k, x in enumerate(nu.positions):
                lines.append(f"{name},{t!r},{w!r},{k},{float(x)!r}")
        C1, r2 = _fit_origin(times, w1)
        row["C1"] = claim(C1, "cli.fit_through_origin")
        row["R2"] = claim(r2, "cli.fit_through_origin", 0.99, ok=r2 >= 0.99)
        ok &= r2 >= 0.99
        if is_wk:
            T_u = measure_cut_time(ctx.model, phi, mu, data=data, check=False).T_u
            row["T_u"] = claim(T_u, "wasserstein_hj.measure_cut_time")
            if T_u == 0.0:
                sing = [classify_measure(ctx.model, phi, nu, data=data)["singular"] for nu in nus]
                row["images_singular"] = claim(sing, "wasserstein_hj.classify_measure", ok=all(sing))
                ok &= all(sing)
            fixed = {}
            for t in times:
                e = abs(p_minus(ctx.model, phi, mu, t) + phi.c0 * t - potential_energy(phi.u, mu))
                fixed[f"{t:g}"] = claim(e, "wasserstein_hj.p_minus", 5e-3, ok=e <= 5e-3)
                ok &= e <= 5e-3
            row["fixed_point"] = fixed
        m[name] = row
        arts += ctx.figure(plotting.propagation_figure(times, w1, C1), f"{tag}_{name}")
    if "csv" in ctx.cfg.formats:
        arts.insert(0, ctx.write(f"{tag}_images.csv", "\n".join(lines) + "\n"))
    return m, ok, arts


def exp_flow(ctx: Context, opts: dict, tag: str):
    fname = opts.get("field", "weak-kam")
    phi = ctx.field(fname)
    name = (opts.get("measures") or [opts.get("source")])[0]
    if name is None:
        raise ConfigError(f"/experiments/{tag}/options/measures: a flow needs a measure",
                          path=f"/experiments/{tag}/options/measures")
    mu = ctx.measures[name]
    T, dt = opts.get("T", 1.0), opts.get("dt", 0.01)
    levels = opts.get("refine", 1)
    if levels > 1:
        study = refinement_study(ctx.model, _as_field(phi), mu, T, dt, levels=levels, check=True)
        result = study["runs"][-1]
        refine = {"rows": _clean(study["rows"]), "C": claim(study["C"], "flow.refinement_study")}
    else:
        result = minimizing_movement(ctx.model, phi, mu, T, dt)
        refine = None
    s = result.summary()
    cr = continuity_residual(ctx.model, phi, result)
    eb = energy_bookkeeping(ctx.model, phi, result)
    m = {
        "measure": name, "field": fname,
        "dt": claim(result.dt, "flow.minimizing_movement"),
        "mean_velocity": claim(s["mean_velocity"], "flow.minimizing_movement"),
        "max_speed": claim(s["max_speed"], "flow.minimizing_movement"),
        "final_positions": claim(result.step_positions[-1].tolist(), "flow.minimizing_movement"),
        "continuity": {k: claim(v["max_residual"], "flow.continuity_residual", cr["tolerance"],
                                ok=v["ok"], worst_time=v["worst_time"])
                       for k, v in cr["tests"].items()},
        "continuity_skipped": claim(cr["skipped"], "flow.continuity_residual", samples=cr["samples"]),
        "energy_gap": claim(eb["gap"], "flow.energy_bookkeeping", 5e-3, ok=eb["ok"]),
    }
    ok = cr["all_ok"] and eb["ok"]
    if refine is not None:
        m["refinement"] = refine
    if isinstance(phi, WeakKamSolution):
        inv = invariance_check(ctx.model, phi, result, data=ctx.cut())
        m["invariance"] = claim(inv["all_ok"], "flow.invariance_check", inv.get("tolerance"),
                                ok=inv["all_ok"], failures=_clean(inv.get("failures", [])))
        ok &= inv["all_ok"]
    arts = []
    if "csv" in ctx.cfg.formats:
        arts.append(ctx.write(f"{tag}_curve.csv", result.curve.to_csv()))
    arts += ctx.figure(plotting.trajectory_figure(result.curve, f"{name} under {fname}, dt = {dt:g}"),
                       f"{tag}_curve")
    return m, ok, arts


def exp_invariants(ctx: Context, opts: dict, tag: str):
    rows = _suite(ctx, opts, stream=int(tag.split("_")[0]))
    m = {r["name"]: claim(r["worst"], r["op"], r["tol"], ok=r["ok"], witness=_clean(r["witness"]))
         for r in rows}
    return m, all(r["ok"] for r in rows), []


def _suite(ctx: Context, opts: dict, stream: int):
    names = opts.get("measures") or []
    mu = ctx.measures[names[0]] if names else None
    fields = {}
    for name in (ctx.cfg.raw.get("fields") or {}):
        fields[name] = _as_field(ctx.field(name))
    wk = ctx.weak_kam()
    fields.setdefault("weak-kam", wk.u)
    return invariants.run_suite(ctx.model, wk, fields, ctx.cfg.rng(stream), ctx.cfg.N, mu)


RUNNERS = {
    "weak-kam": exp_weak_kam,
    "cut-report": exp_cut_report,
    "cost": exp_cost,
    "propagate": exp_propagate,
    "flow": exp_flow,
    "invariants": exp_invariants,
}


# ------------------------------------------------------------------ driver


def run(cfg: ScenarioConfig, base_dir: str = ".") -> tuple[dict, int]:
    os.makedirs(cfg.out_dir, exist_ok=True)
    report = {"kamlab": __version__, "name": cfg.raw.get("name"), "seed": cfg.seed,
              "model": None, "grid": {"N": cfg.N, "W": cfg.W}, "experiments": []}
    status = 0
    try:
        ctx = Context(cfg, base_dir)
        report["model"] = ctx.model.describe()
    except (KamlabError, ValueError, OSError) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["all_ok"] = False
        return report, 1
    for k, ex in enumerate(cfg.experiments):
        kind = ex["kind"]
        tag = f"{k:02d}_{ex.get('name', kind)}"
        entry = {"kind": kind, "name": ex.get("name", kind), "options": ex.get("options", {})}
        log.info("experiment %s", tag)
        try:
            metrics, ok, arts = RUNNERS[kind](ctx, ex.get("options") or {}, tag)
            entry.update(metrics=_clean(metrics), ok=bool(ok), artifacts=arts)
            if not ok:
                status = 1
        except (KamlabError, ValueError, ArithmeticError, OSError) as exc:
            log.debug("%s", traceback.format_exc())
            err = {"type": type(exc).__name__, "message": str(exc)}
            for attr in ("index", "path", "step"):
                if getattr(exc, attr, None) is not None:
                    err[attr] = _enc(getattr(exc, attr))
            if getattr(exc, "values", None):
                err["values"] = _clean(exc.values)
            entry.update(ok=False, error=err)
            status = 1
        report["experiments"].append(entry)
    report["all_ok"] = status == 0
    return report, status


def write_report(report: dict, out_dir: str) -> str:
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def check_invariants(cfg: ScenarioConfig, base_dir: str = ".") -> tuple[list, int]:
    ctx = Context(cfg, base_dir)
    opts = {}
    for ex in cfg.experiments:
        if ex["kind"] == "invariants":
            opts = ex.get("options") or {}
            break
    rows = _suite(ctx, opts, stream=0)
    return rows, 0 if all(r["ok"] for r in rows) else 1


def _common(defaults: bool) -> argparse.ArgumentParser:
    # flags are accepted before and after the subcommand; only the top level sets defaults
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--threads", type=int, default=d(1), help="worker threads (results do not depend on it)")
    p.add_argument("--out-dir", default=d(None), help="override output.directory")
    p.add_argument("--seed-override", type=int, default=d(None), help="replace the config seed")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kamlab", description=__doc__.splitlines()[0],
                                parents=[_common(True)])
    shared = _common(False)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[shared], help="execute the experiments of a scenario")
    r.add_argument("config")
    c = sub.add_parser("check-invariants", parents=[shared], help="run every module's property suite")
    c.add_argument("config")
    sub.add_parser("print-schema", help="print the config JSON schema")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "print-schema":
        print(json.dumps(SCHEMA, indent=2))
        return 0
    try:
        set_threads(args.threads)
        cfg = load(args.config, args.seed_override, args.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    base = os.path.dirname(os.path.abspath(args.config))
    if args.command == "run":
        report, status = run(cfg, base)
        path = write_report(report, cfg.out_dir)
        print(f"{'ok' if status == 0 else 'FAILED'}: {path}")
        return status
    rows, status = check_invariants(cfg, base)
    print(invariants.table(rows))
    return status


if __name__ == "__main__":
    sys.exit(main())
