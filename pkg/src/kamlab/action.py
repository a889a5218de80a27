"""Fundamental solution A_t(x, y) of the mechanical Hamilton-Jacobi equation.

Curves are discretized on a uniform time grid and the discrete action

    S = sum_k  |eta_{k+1} - eta_k|^2 / (2 h) - h/2 (V(eta_k) + V(eta_{k+1}))

is minimized over the interior nodes by a damped Newton method. The
stationarity conditions of S are exactly the Stormer-Verlet steps, so the
dual arc is read off with the discrete Legendre transform. Everything is
batched over independent endpoint pairs; only one-dimensional domains are
supported here.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import Box, TonelliModel, hamiltonian
from ._kernels import solve_pairs
from .errors import ConvergenceError, SamplingError
from .parallel import ordered_map

GRAD_TOL = 1e-10
MAX_ITER = 200
CHUNK = 1 << 15
TABLE_BLOCK = 4096


def model_key(model: TonelliModel) -> str:
    return json.dumps(model.describe(), sort_keys=True)


def _thomas(diag, off, rhs):
    """Solve batched symmetric tridiagonal systems with constant off-diagonal.

    diag, rhs: (B, n); off: scalar. Returns (solution, positive-definite mask).
    """
    B, n = diag.shape
    D = np.empty_like(diag)
    y = np.empty_like(rhs)
    D[:, 0] = diag[:, 0]
    y[:, 0] = rhs[:, 0]
    for k in range(1, n):
        lk = off / D[:, k - 1]
        D[:, k] = diag[:, k] - lk * off
        y[:, k] = rhs[:, k] - lk * y[:, k - 1]
    x = np.empty_like(rhs)
    x[:, n - 1] = y[:, n - 1] / D[:, n - 1]
    for k in range(n - 2, -1, -1):
        x[:, k] = (y[:, k] - off * x[:, k + 1]) / D[:, k]
    pd = np.all(D > 0, axis=1)
    return x, pd


def _discrete_action(V, nodes, h):
    dv = np.diff(nodes, axis=1)
    pot = V(nodes)
    return np.sum(dv * dv, axis=1) / (2 * h) - 0.5 * h * (
        pot[:, :-1].sum(axis=1) + pot[:, 1:].sum(axis=1)
    )


def _gradient(dV, nodes, h):
    inner = nodes[:, 1:-1]
    return (2 * inner - nodes[:, :-2] - nodes[:, 2:]) / h - h * dV(inner)


def solve_curves(model: TonelliModel, a, b, t: float, intervals: int,
                 tol: float = GRAD_TOL, maxiter: int = MAX_ITER):
    """Minimize the discrete action for lifted endpoint pairs (a_i, b_i).

    Returns (nodes, values, converged, iterations) with nodes of shape
    (B, intervals + 1). The gradient tolerance is floored at the roundoff
    level of the gradient itself, which grows like |eta| / h.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    B = a.size
    K = int(intervals)
    h = t / K
    s = np.linspace(0.0, 1.0, K + 1)
    nodes = a[:, None] + (b - a)[:, None] * s[None, :]
    V, dV, d2V = model.potential.value, model.potential.grad, model.potential.hess
    if K == 1:
        return nodes, _discrete_action(V, nodes, h), np.ones(B, bool), 0

    scale = 1.0 + np.maximum(np.abs(a), np.abs(b))
    gtol = np.maximum(tol, 64 * np.finfo(float).eps * scale / h)
    S = _discrete_action(V, nodes, h)
    off = -1.0 / h
    done = np.zeros(B, bool)
    it = 0
    for it in range(1, maxiter + 1):
        g = _gradient(dV, nodes, h)
        done |= np.max(np.abs(g), axis=1) <= gtol
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        ga = g[idx]
        diag = 2.0 / h - h * d2V(nodes[idx, 1:-1])
        step, pd = _thomas(diag, off, -ga)
        shift = np.zeros(idx.size)
        for _ in range(60):
            if pd.all():
                break
            bad = np.flatnonzero(~pd)
            base = np.maximum(np.abs(diag[bad]).max(axis=1), 1.0)
            shift[bad] = np.where(shift[bad] == 0, 1e-3 * base, 4 * shift[bad])
            step[bad], pd[bad] = _thomas(diag[bad] + shift[bad, None], off, -ga[bad])
        S0 = S[idx]
        # roundoff allowance so tiny final Newton steps are not rejected
        slack = 1e-14 * (1.0 + np.abs(S0) + np.sum(np.abs(np.diff(nodes[idx], axis=1)), axis=1) / h)
        slope = np.sum(ga * step, axis=1)
        alpha = np.ones(idx.size)
        pending = np.ones(idx.size, bool)
        new_nodes = nodes[idx].copy()
        for _ in range(50):
            pi = np.flatnonzero(pending)
            trial = nodes[idx[pi]].copy()
            trial[:, 1:-1] += alpha[pi, None] * step[pi]
            St = _discrete_action(V, trial, h)
            ok = St <= S0[pi] + 1e-4 * alpha[pi] * slope[pi] + slack[pi]
            acc = pi[ok]
            new_nodes[acc] = trial[ok]
            S[idx[acc]] = St[ok]
            pending[acc] = False
            if not pending.any():
                break
            alpha[pending] *= 0.5
        nodes[idx] = new_nodes
        # no admissible decrease left: stationary up to roundoff
        done[idx[pending]] = True
    g = _gradient(dV, nodes, h)
    converged = np.max(np.abs(g), axis=1) <= 10 * gtol
    S = _discrete_action(V, nodes, h)
    return nodes, S, converged, it


def dual_arc(model: TonelliModel, nodes, t: float):
    """Discrete Legendre transform of a stationary discrete curve."""
    nodes = np.atleast_2d(nodes)
    K = nodes.shape[1] - 1
    h = t / K
    dV = model.potential.grad(nodes)
    vel = np.diff(nodes, axis=1) / h
    p = np.empty_like(nodes)
    p[:, :-1] = vel + 0.5 * h * dV[:, :-1]
    p[:, -1] = vel[:, -1] - 0.5 * h * dV[:, -1]
    return p


@dataclass
class ActionResult:
    value: float
    times: np.ndarray
    minimizer: np.ndarray       # lifted curve, minimizer[0] = x
    dual_arc: np.ndarray
    homotopy_tag: int = 0
    t: float = 0.0
    converged: bool = True
    iterations: int = 0
    x: float = 0.0
    y: float = 0.0
    model: Optional[TonelliModel] = field(default=None, repr=False)

    @property
    def endpoint(self) -> float:
        return float(self.minimizer[-1])


def _lifts(model: TonelliModel, x, y, winding: int):
    if isinstance(model.domain, Box):
        return np.array([float(y)]), np.array([0])
    base = float(x) + float(model.domain.displacement(x, y))
    ws = np.arange(-winding, winding + 1)
    return base + ws * model.domain.period, ws


def fundamental_solution(model: TonelliModel, x, y, t: float, resolution: int = 129,
                         winding: int = 2) -> ActionResult:
    """A_t(x, y) with its minimizer, searched over winding classes |w| <= winding."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if resolution < 2:
        raise ValueError("resolution must be >= 2 curve nodes")
    model.check(x)
    model.check(y)
    ends, ws = _lifts(model, x, y, winding)
    starts = np.full(ends.shape, float(x))
    nodes, vals, conv, it = solve_curves(model, starts, ends, t, resolution - 1)
    # deterministic tie-break: value, then |w|, then nodes
    order = sorted(range(len(ws)), key=lambda i: (round(vals[i], 12), abs(ws[i]), tuple(nodes[i])))
    best = order[0]
    res = ActionResult(
        value=float(vals[best]),
        times=np.linspace(0.0, t, resolution),
        minimizer=nodes[best],
        dual_arc=dual_arc(model, nodes[best], t)[0],
        homotopy_tag=int(ws[best]),
        t=t,
        converged=bool(conv[best]),
        iterations=it,
        x=float(x),
        y=float(y),
        model=model,
    )
    if not res.converged:
        raise ConvergenceError(f"action minimization did not converge for ({x}, {y}, {t})", best=res)
    return res



def action_derivatives(result: ActionResult):
    """(D_x A, D_y A, D_t A) = (-p(0), p(t), -H(eta(t), p(t)))."""
    p0 = float(result.dual_arc[0])
    pt = float(result.dual_arc[-1])
    end = float(result.model.domain.reduce(result.minimizer[-1]))
    return -p0, pt, -float(hamiltonian(result.model, end, pt))


def pair_results(model: TonelliModel, xs, ys, t: float, resolution: int = 129,
                 winding: int = 2):
    """Batched fundamental solutions for the pairs (xs[i], ys[i]).

    Returns a list of ActionResult in input order.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    n = xs.size
    lifts = [_lifts(model, x, y, winding) for x, y in zip(xs, ys)]
    nw = lifts[0][0].size
    ends = np.concatenate([l[0] for l in lifts])
    ws = lifts[0][1]
    starts = np.repeat(xs, nw)
    out_nodes = np.empty((ends.size, resolution))
    out_vals = np.empty(ends.size)
    out_conv = np.empty(ends.size, bool)
    it = 0
    for lo in range(0, ends.size, CHUNK):
        hi = min(lo + CHUNK, ends.size)
        nd, v, c, k = solve_curves(model, starts[lo:hi], ends[lo:hi], t, resolution - 1)
        out_nodes[lo:hi], out_vals[lo:hi], out_conv[lo:hi] = nd, v, c
        it = max(it, k)
    results = []
    times = np.linspace(0.0, t, resolution)
    for i in range(n):
        blk = slice(i * nw, (i + 1) * nw)
        vals, nodes, conv = out_vals[blk], out_nodes[blk], out_conv[blk]
        best = min(range(nw), key=lambda k: (round(vals[k], 12), abs(ws[k]), tuple(nodes[k])))
        res = ActionResult(float(vals[best]), times, nodes[best],
                           dual_arc(model, nodes[best], t)[0], int(ws[best]), t,
                           bool(conv[best]), it, float(xs[i]), float(ys[i]), model)
        if not res.converged:
            raise ConvergenceError(
                f"action minimization did not converge for pair {i} ({xs[i]}, {ys[i]})", best=res)
        results.append(res)
    return results


def convexity_probe(model: TonelliModel, x: float, t: float, radius: float,
                    samples: int = 200, rng=None, resolution: int = 65):
    """Midpoint estimates of the convexity moduli of y -> A_t(x, y) on B(x, radius).

    For each triple (y1, y2, m = (y1 + y2)/2) the quantity
    4 (A(y1) + A(y2) - 2 A(m)) / |y1 - y2|^2 is a second-difference
    estimate of the Hessian; the minimum is reported as the semiconvexity
    modulus and the maximum as the semiconcavity modulus (both per unit,
    i.e. already divided by t). ``max_quadratic_defect`` is the largest
    deviation from the free-particle value |y1 - y2|^2 / (4 t).
    """
    rng = np.random.default_rng(rng)
    d = rng.uniform(-radius, radius, size=(samples, 2))
    keep = np.abs(d[:, 0] - d[:, 1]) > 1e-3 * radius
    d = d[keep]
    if d.shape[0] < 10:
        raise SamplingError(f"only {d.shape[0]} valid triples")
    pts = np.concatenate([d[:, 0], d[:, 1], d.mean(axis=1)]) + x
    starts = np.full(pts.shape, float(x))
    nodes, vals, conv, _ = solve_curves(model, starts, pts, t, resolution - 1)
    if not conv.all():
        raise ConvergenceError("convexity probe: action solve did not converge")
    n = d.shape[0]
    a1, a2, am = vals[:n], vals[n:2 * n], vals[2 * n:]
    sep2 = (d[:, 0] - d[:, 1]) ** 2
    second = a1 + a2 - 2 * am
    moduli = 4 * second / sep2
    return {
        "semiconvex_const": float(moduli.min()),
        "semiconcave_const": float(moduli.max()),
        "max_quadratic_defect": float(np.max(np.abs(second - sep2 / (4 * t)))),
        "triples": int(n),
    }


# ------------------------------------------------------------------- tables


def table_intervals(t: float, ds: float = 1.0 / 256, kmin: int = 8, kmax: int = 64) -> int:
    return int(min(kmax, max(kmin, np.ceil(t / ds))))


class ActionTable:
    """A_t(x_i, x_i + j dx) on a periodic grid, j = -J..J (lifted offsets).

    Offsets beyond half a period cover the non-trivial winding classes, so
    no separate winding search is needed.
    """

    def __init__(self, model: TonelliModel, n: int, t: float, J: int, values: np.ndarray):
        self.model = model
        self.n = n
        self.t = t
        self.J = J
        self.values = values      # (n, 2J + 1)

    def offset(self, j: int) -> np.ndarray:
        return self.values[:, j + self.J]

    @classmethod
    def build(cls, model: TonelliModel, n: int, t: float, J: int, intervals: Optional[int] = None):
        K = intervals or table_intervals(t)
        dx = model.domain.period / n
        x = np.arange(n) * dx
        # reversibility: A(x, x - j dx) = A(x - j dx, x), so only j >= 0 is solved
        js = np.arange(0, J + 1)
        a = np.repeat(x, js.size)
        b = a + np.tile(js * dx, n)
        kind, amp, coef = model.potential.kernel_spec()
        # fixed row blocks, so the result does not depend on the thread count
        blocks = [slice(lo, min(lo + TABLE_BLOCK, a.size)) for lo in range(0, a.size, TABLE_BLOCK)]
        got = ordered_map(lambda s: solve_pairs(kind, amp, coef, a[s], b[s], float(t), K,
                                                GRAD_TOL, MAX_ITER), blocks)
        half = np.concatenate([g[0] for g in got])
        conv = np.concatenate([g[1] for g in got])
        if not conv.all():
            bad = int(np.flatnonzero(~conv)[0])
            raise ConvergenceError(f"table solve failed at pair {bad} (t={t})")
        half = half.reshape(n, js.size)
        vals = np.empty((n, 2 * J + 1))
        vals[:, J:] = half
        for j in range(1, J + 1):
            vals[:, J - j] = np.roll(half[:, j], j)
        return cls(model, n, t, J, vals)


_cache: dict = {}
_lock = threading.Lock()


def action_table(model: TonelliModel, n: int, t: float, J: int) -> ActionTable:
    """Memoized ActionTable; a cached table with a wider stencil is sliced."""
    key = (model_key(model), n, float(t))
    with _lock:
        tab = _cache.get(key)
    if tab is not None and tab.J >= J:
        if tab.J == J:
            return tab
        lo = tab.J - J
        return ActionTable(model, n, t, J, tab.values[:, lo:lo + 2 * J + 1])
    tab = ActionTable.build(model, n, t, J)
    with _lock:
        cur = _cache.get(key)
        if cur is None or cur.J < J:
            _cache[key] = tab
    return tab


def clear_cache():
    with _lock:
        _cache.clear()
