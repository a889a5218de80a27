"""Finite weighted-particle measures, exact transport plans and gluing.

Positions are floats on T^1 (or rows of an (k, m) array); distances use the
minimal representative of y - x. Optimal plans come from the transport LP,
solved to a vertex by the HiGHS dual simplex.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix, vstack

from .dynamics import Torus
from .errors import DomainError, ValidationError

MERGE_EPS = 1e-9
WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10
MAX_ATOMS = 256


class DiscreteMeasure:
    """Probability measure sum_i w_i delta_{x_i} on a torus or box."""

    def __init__(self, positions, weights=None, domain=None, canonical: bool = False,
                 merge_eps: float = MERGE_EPS):
        self.domain = domain if domain is not None else Torus()
        x = np.array(positions, dtype=float, copy=True)
        if self.domain.dim == 1:
            x = x.reshape(-1)
        elif x.ndim != 2 or x.shape[1] != self.domain.dim:
            raise ValidationError("positions must have shape (k, dim)")
        k = x.shape[0]
        if k == 0:
            raise ValidationError("a measure needs at least one atom")
        w = np.full(k, 1.0 / k) if weights is None else np.array(weights, dtype=float, copy=True).reshape(-1)
        if w.size != k:
            raise ValidationError("positions and weights differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValidationError("non-finite atom data")
        if np.any(w < 0):
            raise ValidationError("negative weight")
        if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, k):
            raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
        if not self.domain.contains(x):
            raise DomainError("atom outside the domain")
        self.positions = self.domain.reduce(x)
        self.weights = w
        if canonical:
            self._merge(merge_eps)

    # basic views
    def __len__(self):
        return self.weights.size

    @property
    def size(self):
        return self.weights.size

    def __repr__(self):
        return f"DiscreteMeasure({self.size} atoms)"

    def support(self, tol: float = 0.0):
        return self.positions[self.weights > tol]

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.positions)))

    def _merge(self, eps):
        if self.size == 1:
            return
        order = np.lexsort(np.atleast_2d(self.positions.T)[::-1]) if self.positions.ndim == 2 \
            else np.argsort(self.positions, kind="stable")
        keep_x, keep_w = [], []
        for i in order:
            xi, wi = self.positions[i], self.weights[i]
            for k, xk in enumerate(keep_x):
                if np.all(np.abs(self.domain.displacement(xk, xi)) < eps):
                    keep_w[k] += wi
                    break
            else:
                keep_x.append(xi)
                keep_w.append(wi)
        self.positions = np.array(keep_x)
        self.weights = np.array(keep_w)

    def canonical(self, eps: float = MERGE_EPS) -> "DiscreteMeasure":
        return DiscreteMeasure(self.positions, self.weights, self.domain, canonical=True, merge_eps=eps)

    def equals(self, other: "DiscreteMeasure", tol: float = 0.0) -> bool:
        a, b = self.canonical(), other.canonical()
        if a.size != b.size:
            return False
        dx = np.abs(a.domain.displacement(a.positions, b.positions))
        return bool(np.all(dx <= tol) and np.all(np.abs(a.weights - b.weights) <= max(tol, 1e-14)))

    # serialization
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        cols = ["x"] if self.positions.ndim == 1 else [f"x{d}" for d in range(self.positions.shape[1])]
        w.writerow(cols + ["w"])
        for x, wt in zip(np.atleast_1d(self.positions), self.weights):
            w.writerow([repr(float(v)) for v in np.atleast_1d(x)] + [repr(float(wt))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, domain=None):
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], [r for r in rows[1:] if r]
        data = np.array([[float(v) for v in r] for r in body])
        x = data[:, :-1] if len(head) > 2 else data[:, 0]
        return cls(x, data[:, -1], domain)

    def to_dict(self) -> dict:
        return {"positions": np.asarray(self.positions).tolist(), "weights": self.weights.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, domain=None):
        d = json.loads(text)
        return cls(d["positions"], d["weights"], domain)


def dirac(x, domain=None) -> DiscreteMeasure:
    return DiscreteMeasure([x], [1.0], domain)


def uniform_cloud(k: int, rng, domain=None, avoid=(), margin: float = 0.0) -> DiscreteMeasure:
    """k atoms of equal mass at uniform random positions on T^1."""
    x = []
    while len(x) < k:
        y = rng.random()
        if all(abs(Torus().displacement(a, y)) > margin for a in avoid):
            x.append(y)
    return DiscreteMeasure(np.array(x), None, domain)


def random_measure(k: int, rng, domain=None) -> DiscreteMeasure:
    w = rng.random(k) + 0.05
    return DiscreteMeasure(rng.random(k), w / w.sum(), domain)


# ------------------------------------------------------------------- plans


@dataclass
class TransportPlan:
    source: DiscreteMeasure
    target: DiscreteMeasure
    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    cost: Optional[float] = None
    duals: Optional[tuple] = None

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=int)
        self.j = np.asarray(self.j, dtype=int)
        self.mass = np.asarray(self.mass, dtype=float)
        if np.any(self.mass < 0):
            raise ValidationError("negative plan mass")

    @classmethod
    def from_dense(cls, source, target, G, drop: float = 0.0, **kw):
        G = np.asarray(G, dtype=float)
        i, j = np.nonzero(G > drop)
        return cls(source, target, i, j, G[i, j], **kw)

    def dense(self) -> np.ndarray:
        G = np.zeros((self.source.size, self.target.size))
        np.add.at(G, (self.i, self.j), self.mass)
        return G

    def marginal_error(self) -> float:
        G = self.dense()
        return float(max(np.max(np.abs(G.sum(1) - self.source.weights)),
                         np.max(np.abs(G.sum(0) - self.target.weights))))

    def validate(self, tol: float = MARGINAL_TOL):
        err = self.marginal_error()
        if err > tol:
            raise ValidationError(f"plan marginals off by {err:.3g}")
        return self

    def entries(self):
        return list(zip(self.i.tolist(), self.j.tolist(), self.mass.tolist()))

    def to_dict(self) -> dict:
        return {"entries": [[i, j, m] for i, j, m in self.entries()], "cost": self.cost}


def distance(domain, x, y):
    d = domain.displacement(x, y)
    return np.abs(d) if np.ndim(d) == 0 or domain.dim == 1 else np.linalg.norm(d, axis=-1)


def distance_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    if mu.domain.dim == 1:
        return distance(mu.domain, mu.positions[:, None], nu.positions[None, :])
    return distance(mu.domain, mu.positions[:, None, :], nu.positions[None, :, :])


def _check_sizes(mu, nu, max_atoms):
    if mu.size > max_atoms or nu.size > max_atoms:
        raise ValidationError(f"support larger than {max_atoms} atoms")
    if abs(mu.weights.sum() - nu.weights.sum()) > WEIGHT_TOL * max(mu.size, nu.size):
        raise ValidationError("marginal masses differ")


def _marginal_matrix(n, m):
    rows = csr_matrix((np.ones(n * m), (np.repeat(np.arange(n), m), np.arange(n * m))), shape=(n, n * m))
    cols = csr_matrix((np.ones(n * m), (np.tile(np.arange(m), n), np.arange(n * m))), shape=(m, n * m))
    return vstack([rows, cols]).tocsr()


def solve_transport(C, a, b, extra=None):
    """Exact transport LP: min <C, G> over G >= 0 with marginals (a, b).

    Returns (G, value, (u, v)). ``extra`` = (row, bound) adds one
    inequality row . G <= bound (used to optimize over the optimal face).
    """
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    A = _marginal_matrix(n, m)
    rhs = np.concatenate([a, b])
    kw = {}
    if extra is not None:
        row = np.asarray(extra[0], dtype=float).reshape(1, -1)
        scale = max(float(np.max(np.abs(row))), 1e-300)
        kw = {"A_ub": row / scale, "b_ub": [extra[1] / scale]}
    res = linprog(C.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs-ds", **kw)
    if res.status != 0:
        raise ValidationError(f"transport LP failed: {res.message}")
    G = np.maximum(res.x.reshape(n, m), 0.0)
    duals = res.eqlin.marginals
    return G, float(np.sum(C * G)), (duals[:n], duals[n:])


def slackness_residual(C, G, u, v) -> float:
    """Worst violation of dual feasibility and complementary slackness."""
    red = C - u[:, None] - v[None, :]
    feas = max(0.0, -float(red.min()))
    comp = float(np.max(np.abs(red[G > 0]))) if np.any(G > 0) else 0.0
    return max(feas, comp)


def optimal_plan(p: int, mu: DiscreteMeasure, nu: DiscreteMeasure, max_atoms: int = MAX_ATOMS) -> TransportPlan:
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    _check_sizes(mu, nu, max_atoms)
    C = distance_matrix(mu, nu) ** p
    G, val, duals = solve_transport(C, mu.weights, nu.weights)
    return TransportPlan.from_dense(mu, nu, G, cost=val, duals=duals)


def wasserstein(p: int, mu: DiscreteMeasure, nu: DiscreteMeasure, max_atoms: int = MAX_ATOMS) -> float:
    plan = optimal_plan(p, mu, nu, max_atoms)
    return float(max(plan.cost, 0.0) ** (1.0 / p))


def plan_cost(plan: TransportPlan, p: int = 2) -> float:
    d = distance(plan.source.domain, plan.source.positions[plan.i], plan.target.positions[plan.j])
    return float(np.dot(plan.mass, d ** p))


def pushforward(mu: DiscreteMeasure, f: Callable, merge_eps: float = MERGE_EPS) -> DiscreteMeasure:
    """Image measure f#mu; atoms landing within merge_eps are merged."""
    y = np.asarray(f(mu.positions), dtype=float)
    if not mu.domain.contains(y):
        raise DomainError("map sends an atom outside the domain")
    return DiscreteMeasure(y, mu.weights, mu.domain, canonical=True, merge_eps=merge_eps)


# ----------------------------------------------------------------- gluing


@dataclass
class MultiMarginal:
    """Three-marginal discrete measure with entries (i, j, k, mass)."""

    measures: tuple
    idx: np.ndarray      # (E, 3)
    mass: np.ndarray

    def projection(self, a: int, b: int) -> np.ndarray:
        shape = (self.measures[a].size, self.measures[b].size)
        G = np.zeros(shape)
        np.add.at(G, (self.idx[:, a], self.idx[:, b]), self.mass)
        return G


def glue(gamma: TransportPlan, gamma2: TransportPlan) -> MultiMarginal:
    """Gluing of two plans sharing their first marginal.

    Mass gamma_ij gamma'_ik / mu_i, i.e. the two conditionals are taken
    independent on each fiber of the common marginal.
    """
    mu = gamma.source
    if gamma2.source is not mu and not gamma2.source.equals(mu):
        raise ValidationError("plans do not share their source measure")
    G, H = gamma.dense(), gamma2.dense()
    w = mu.weights
    bad = (w == 0) & ((G.sum(1) > 0) | (H.sum(1) > 0))
    if np.any(bad):
        raise ValidationError(f"plan mass on zero-weight atom {int(np.flatnonzero(bad)[0])}")
    idx, mass = [], []
    for i in range(mu.size):
        if w[i] == 0:
            continue
        js, ks = np.flatnonzero(G[i] > 0), np.flatnonzero(H[i] > 0)
        for j in js:
            for k in ks:
                idx.append((i, j, k))
                mass.append(G[i, j] * H[i, k] / w[i])
    return MultiMarginal((mu, gamma.target, gamma2.target), np.array(idx, dtype=int).reshape(-1, 3),
                         np.array(mass))


@dataclass
class Interpolated:
    measure: DiscreteMeasure
    antipodal: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.antipodal))


def _geodesic_points(domain, x, y, lam):
    d = np.asarray(domain.displacement(x, y), dtype=float)
    anti = np.zeros(d.shape[0], dtype=bool)
    if isinstance(domain, Torus):
        half = 0.5 * domain.period
        tie = np.isclose(np.abs(d), half, rtol=0, atol=1e-12)
        d = np.where(tie, half, d)
        anti = tie if d.ndim == 1 else tie.any(axis=-1)
    return domain.reduce(x + lam * d), anti


def geodesic_interpolate(plan, lam: float, pair=(0, 1), merge: bool = True) -> Interpolated:
    """Atoms at (1 - lam) x_i + lam x_j along minimal geodesics, entry masses kept."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if isinstance(plan, TransportPlan):
        ms = (plan.source, plan.target)
        ii, jj, mass = plan.i, plan.j, plan.mass
    else:
        ms = plan.measures
        ii, jj, mass = plan.idx[:, pair[0]], plan.idx[:, pair[1]], plan.mass
        ms = (ms[pair[0]], ms[pair[1]])
    dom = ms[0].domain
    x, y = ms[0].positions[ii], ms[1].positions[jj]
    pts, anti = _geodesic_points(dom, x, y, lam)
    if lam == 0.0:
        pts = x
    elif lam == 1.0:
        pts = y
    keep = mass > 0
    meas = DiscreteMeasure(pts[keep], mass[keep] / mass[keep].sum(), dom, canonical=merge)
    return Interpolated(meas, anti[keep])


# --------------------------------------------------------- potential energy


def potential_energy(phi, mu: DiscreteMeasure) -> float:
    """Integral of the field phi against mu."""
    return float(np.dot(mu.weights, phi(mu.positions)))


def atom_nodes(field, mu: DiscreteMeasure) -> np.ndarray:
    """Index of the grid node nearest to each atom."""
    return field.nearest(mu.positions)


def singular_mass(sing_mask: np.ndarray, field, mu: DiscreteMeasure, dilate: int = 0) -> float:
    mask = np.asarray(sing_mask, dtype=bool)
    if dilate:
        mask = mask.copy()
        base = mask.copy()
        for s in range(1, dilate + 1):
            mask |= np.roll(base, s) | np.roll(base, -s)
    return float(np.sum(mu.weights[mask[atom_nodes(field, mu)]]))


def is_singular(sing_mask, field, mu: DiscreteMeasure) -> bool:
    """True when an atom of positive mass sits at a flagged grid node."""
    return singular_mass(sing_mask, field, mu) > 0


def _perturb(mu: DiscreteMeasure, rng, radius: float):
    """Split each atom in two and move both pieces by at most radius."""
    k = mu.size
    split = rng.random(k)
    w = np.concatenate([mu.weights * split, mu.weights * (1 - split)])
    scale = radius * rng.random()
    d = rng.uniform(-1.0, 1.0, 2 * k) * scale
    return DiscreteMeasure(np.concatenate([mu.positions, mu.positions]) + d, w, mu.domain)


def local_superdifferential_check(phi, mu: DiscreteMeasure, alpha, trials: int = 200, rng=None,
                                  radius: float = 0.05, C_R: Optional[float] = None,
                                  tol: float = 1e-8) -> dict:
    """Sampled test of phi(nu) - phi(mu) <= inf_gamma sum <alpha, y - x> + C_R W2^2.

    The infimum runs over the optimal W2 plans; it is a second LP over the
    optimal face. Returns per-trial margins and the worst witness.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (mu.size,))
    if C_R is None:
        C_R = phi.semiconcavity()
    e0 = potential_energy(phi, mu)
    margins, witnesses = [], []
    for _ in range(trials):
        nu = _perturb(mu, rng, radius)
        D = mu.domain.displacement(mu.positions[:, None], nu.positions[None, :])
        C = D ** 2
        G, w2sq, _ = solve_transport(C, mu.weights, nu.weights)
        lin = alpha[:, None] * D
        G2, lin_inf, _ = solve_transport(lin, mu.weights, nu.weights,
                                         extra=(C.ravel(), w2sq + 1e-10 * (1 + w2sq)))
        margin = lin_inf + C_R * w2sq - (potential_energy(phi, nu) - e0)
        margins.append(margin)
        witnesses.append(nu)
    margins = np.array(margins)
    worst = int(np.argmin(margins))
    return {
        "passed": margins >= -tol,
        "margins": margins,
        "all_pass": bool(np.all(margins >= -tol)),
        "worst_margin": float(margins[worst]),
        "worst_witness": witnesses[worst].to_dict(),
        "C_R": float(C_R),
    }
