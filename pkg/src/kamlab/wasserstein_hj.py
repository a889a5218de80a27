"""Lax-Oleinik operators on measures, measure cut time and argmax measures.

For a potential energy mu -> int phi dmu the random operators reduce to
atom sums of the scalar evolutions, P_t^{-/+} phi(mu) = sum w_i T_t^{-/+} phi(x_i),
so everything here is assembled from hopf_lax fields evaluated at atoms.
"""
from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .action import model_key
from .dynamics import TonelliModel, hamiltonian
from .errors import AmbiguityError, ConsistencyError
from .hopf_lax import (CutData, ScalarField, WeakKamSolution, characteristic_endpoint, cut_data,
                       cut_times_from_B, evolve, field_gradient, intrinsic_characteristic, kink_mask,
                       probe_spacing,
                       t_minus, t_plus)
from .measure import DiscreteMeasure, potential_energy, pushforward, singular_mass

_FIELDS = {}
_LOCK = threading.Lock()


def _digest(phi: ScalarField) -> str:
    return hashlib.sha1(np.ascontiguousarray(phi.values).tobytes()).hexdigest()


def lax_field(model: TonelliModel, phi: ScalarField, t: float, sign: int) -> ScalarField:
    """Memoized T_t^{sign} phi."""
    key = (model_key(model), _digest(phi), float(t), int(sign))
    with _LOCK:
        hit = _FIELDS.get(key)
    if hit is not None:
        return hit
    out = t_minus(model, phi, t) if sign < 0 else t_plus(model, phi, t)
    with _LOCK:
        return _FIELDS.setdefault(key, out)


def clear_field_cache():
    with _LOCK:
        _FIELDS.clear()


def _as_field(phi):
    return phi.u if isinstance(phi, WeakKamSolution) else phi


def p_minus(model: TonelliModel, phi, mu: DiscreteMeasure, t: float) -> float:
    """P_t^- phi(mu) = inf_nu {phi(nu) + C^t(nu, mu)} = sum w_i T_t^- phi(x_i)."""
    phi = _as_field(phi)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return potential_energy(phi, mu)
    return potential_energy(lax_field(model, phi, t, -1), mu)


def p_plus(model: TonelliModel, phi, mu: DiscreteMeasure, t: float) -> float:
    """P_t^+ phi(mu) = sup_nu {phi(nu) - C^t(mu, nu)} = sum w_i T_t^+ phi(x_i)."""
    phi = _as_field(phi)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return potential_energy(phi, mu)
    return potential_energy(lax_field(model, phi, t, +1), mu)


# ---------------------------------------------------------- argmax measures


def argmax_map(model: TonelliModel, phi, x, t: float, check: bool = True,
               plus: Optional[ScalarField] = None):
    """Per-atom image pi o Phi_H^t(x, D T_t^+ phi(x)).

    With ``check`` each image is compared against the grid argmax of
    phi(.) - A_t(x, .); a mismatch beyond two cells or a tie raises
    AmbiguityError carrying the atom index.
    """
    phi = _as_field(phi)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if plus is None:
        plus = lax_field(model, phi, t, +1)
    y = np.atleast_1d(characteristic_endpoint(model, plus, x, t))
    if check:
        for k, (xk, yk) in enumerate(zip(x, y)):
            try:
                yg = intrinsic_characteristic(model, phi, xk, t, plus=plus, check=False)
            except AmbiguityError as exc:
                raise AmbiguityError(f"atom {k}: {exc}", exc.candidates, index=k) from exc
            gap = abs(float(model.domain.displacement(yk, yg)))
            if gap > 2 * phi.dx:
                raise AmbiguityError(
                    f"atom {k}: characteristic endpoint {yk:.6g} and grid argmax {yg:.6g} differ by {gap:.3g}",
                    (float(yk), float(yg)), index=k)
    return model.domain.reduce(y)


def argmax_measure(model: TonelliModel, phi, mu: DiscreteMeasure, t: float,
                   check: bool = True) -> DiscreteMeasure:
    """nu_{phi,mu}(t), the unique maximizer of phi(nu) - C^t(mu, nu) for small t."""
    if not t > 0:
        raise ValueError("t must be positive")
    y = argmax_map(model, phi, mu.positions, t, check)
    return pushforward(mu, lambda _: y)


# --------------------------------------------------------- measure cut time


@dataclass
class MeasureCutReport:
    T_u: float
    by_formula: dict
    witnesses: list
    tolerance: float
    tol_B: float
    commutator: list = field(default_factory=list)

    @property
    def infinite(self) -> bool:
        return math.isinf(self.T_u)

    def to_dict(self) -> dict:
        enc = lambda v: "inf" if math.isinf(v) else float(v)
        return {"T_u": enc(self.T_u), "by_formula": {k: enc(v) for k, v in self.by_formula.items()},
                "witnesses": [enc(w) for w in self.witnesses], "tolerance": self.tolerance,
                "tol_B": self.tol_B}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class CommutatorData:
    t_grid: np.ndarray
    minus_plus: list     # T_t^- T_t^+ u
    plus_minus: list     # T_t^+ T_t^- u


_COMM = {}


def commutator_data(model: TonelliModel, wk: WeakKamSolution, t_grid) -> CommutatorData:
    t_grid = np.asarray(t_grid, dtype=float)
    key = (model_key(model), _digest(wk.u), tuple(t_grid.tolist()), wk.delta)
    with _LOCK:
        hit = _COMM.get(key)
    if hit is not None:
        return hit
    step = wk.delta
    plus = evolve(model, wk.u, t_grid, +1, step=step)
    minus = evolve(model, wk.u, t_grid, -1, step=step)
    mp = [evolve(model, f, [t], -1, step=step)[0] for f, t in zip(plus, t_grid)]
    pm = [evolve(model, f, [t], +1, step=step)[0] for f, t in zip(minus, t_grid)]
    out = CommutatorData(t_grid, mp, pm)
    with _LOCK:
        return _COMM.setdefault(key, out)


def _atom_B(data: CutData, x):
    n, dx = data.tau.n, data.tau.dx
    s = np.mod(np.asarray(x, dtype=float), 1.0) / dx
    i = np.floor(s).astype(int) % n
    th = s - np.floor(s)
    j = (i + 1) % n
    return (1 - th) * data.B[:, i] + th * data.B[:, j]      # (probes, atoms)


def _prefix_time(t_grid, ok):
    ok = np.asarray(ok, dtype=bool)
    if ok.all():
        return math.inf
    first = int(np.argmin(ok))
    return 0.0 if first == 0 else float(t_grid[first - 1])


def measure_cut_time(model: TonelliModel, wk: WeakKamSolution, mu: DiscreteMeasure, t_grid=None,
                     data: Optional[CutData] = None, check: bool = True,
                     commutator: bool = True) -> MeasureCutReport:
    """T_u(mu) by three routes.

    A: largest leading probe with |P_t^-(P_t^+u)(mu) - P_t^+(P_t^-u)(mu)| <= tol_B.
    B: largest leading probe where the atoms with B_u(t, x_i) <= tol_B carry all mass.
    C: min over charged atoms of tau_u(x_i).
    """
    if data is None:
        data = cut_data(model, wk, t_grid)
    tg = data.t_grid
    w = mu.weights
    charged = w > 0
    Bx = _atom_B(data, mu.positions)
    taus = cut_times_from_B(tg, Bx, data.tol_B)
    formula_c = float(np.min(taus[charged]))
    mass_ok = np.array([np.sum(w[(Bx[k] <= data.tol_B) & charged]) for k in range(tg.size)])
    formula_b = _prefix_time(tg, mass_ok >= 1.0 - 1e-12)
    values = {"commutator": None, "B_mass": formula_b, "inf_tau": formula_c}
    comm = []
    if commutator:
        cd = commutator_data(model, wk, tg)
        comm = [float(potential_energy(a, mu) - potential_energy(b, mu))
                for a, b in zip(cd.minus_plus, cd.plus_minus)]
        values["commutator"] = _prefix_time(tg, np.abs(comm) <= data.tol_B)
    else:
        values.pop("commutator")
    tol = max(probe_spacing(tg, formula_c), 5e-3)
    rep = MeasureCutReport(formula_c, values, taus.tolist(), tol, data.tol_B, comm)
    if check:
        vals = list(values.values())
        for a in vals:
            for b in vals:
                same = (math.isinf(a) and math.isinf(b)) or abs(a - b) <= tol + 1e-12
                if not same:
                    raise ConsistencyError(f"measure cut time formulas disagree: {values}", values)
    return rep


# ------------------------------------------------------------ classification


def classify_measure(model: TonelliModel, wk: WeakKamSolution, mu: DiscreteMeasure,
                     data: Optional[CutData] = None, t_grid=None) -> dict:
    """regular / singular / cut, with the singular => cut containment asserted."""
    if data is None:
        data = cut_data(model, wk, t_grid)
    mass = singular_mass(data.sing_mask, wk.u, mu)
    T_u = measure_cut_time(model, wk, mu, data=data, check=False, commutator=False).T_u
    singular = mass > 0
    cut = T_u == 0.0
    if singular and not cut:
        raise ConsistencyError("singular measure with positive cut time",
                               {"singular_mass": mass, "T_u": T_u})
    label = "singular" if singular else ("cut" if cut else "regular")
    return {"class": label, "singular_mass": mass, "T_u": T_u, "singular": singular, "cut": cut}


# ------------------------------------------------------------- viscosity


def viscosity_check(model: TonelliModel, phi, samples: Sequence, h: float = 0.01,
                    tol: float = 5e-3, wk: Optional[WeakKamSolution] = None) -> dict:
    """Residual of d/dt P_t^- phi(mu) + sum w_i H(x_i, D T_t^- phi(x_i)) at sampled (t, mu).

    Atoms at flagged kinks of T_t^- phi are skipped and reported. With a weak
    KAM solution the stationary residual sum w_i H(x_i, Du(x_i)) - c0 is
    checked on the same measures.
    """
    phi = _as_field(phi)
    rows = []
    for t, mu in samples:
        hh = min(h, 0.5 * t)
        f0 = lax_field(model, phi, t, -1)
        fp = lax_field(model, phi, t + hh, -1)
        fm = lax_field(model, phi, t - hh, -1) if t - hh > 0 else phi
        kinks = kink_mask(f0)
        nodes = f0.nearest(mu.positions)
        bad = kinks[nodes] | kinks[(nodes + 1) % f0.n] | kinks[(nodes - 1) % f0.n]
        if np.any(bad & (mu.weights > 0)):
            rows.append({"t": t, "skipped": True, "atoms": np.flatnonzero(bad).tolist()})
            continue
        q = (fp(mu.positions) - fm(mu.positions)) / (2 * hh)
        a = field_gradient(f0, mu.positions)
        r = float(np.dot(mu.weights, q + hamiltonian(model, mu.positions, a)))
        rows.append({"t": t, "skipped": False, "residual": r, "ok": abs(r) <= tol})
    out = {"samples": rows, "all_ok": all(r.get("ok", True) for r in rows),
           "max_residual": max([abs(r["residual"]) for r in rows if not r["skipped"]], default=0.0)}
    if wk is not None:
        kinks = kink_mask(wk.u)
        stat = []
        for _, mu in samples:
            nodes = wk.u.nearest(mu.positions)
            if np.any(kinks[nodes] | kinks[(nodes + 1) % wk.u.n] | kinks[(nodes - 1) % wk.u.n]):
                continue
            a = field_gradient(wk.u, mu.positions)
            stat.append(float(np.dot(mu.weights, hamiltonian(model, mu.positions, a))) - wk.c0)
        out["stationary_max"] = max([abs(s) for s in stat], default=0.0)
        out["stationary_ok"] = out["stationary_max"] <= tol
    return out
