"""Lax-Oleinik semigroups on a periodic grid of T^1 and weak KAM machinery.

Fields live on the nodes x_i = i / n of the unit circle and are evaluated
elsewhere by periodic piecewise-linear interpolation. The inf/sup
convolutions are taken over lifted offsets j dx with |j| <= J, where
J dx covers the a-priori radius lambda_phi t of the minimizers, and the
discrete optimum is then refined inside the two cells around the best node.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .action import action_table, solve_curves, table_intervals
from .dynamics import TonelliModel, flow_map
from .errors import AmbiguityError, ConvergenceError, ResolutionError

log = logging.getLogger(__name__)

MAX_DIRECT_T = 0.25
J_QUANTUM = 32
KINK_FACTOR = 10.0
# B_u picks up about twice the grid error of u along a characteristic
B_FLOOR = 2e-5


# --------------------------------------------------------------------- field


@dataclass
class ScalarField:
    values: np.ndarray
    period: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 16:
            raise ResolutionError("a field needs at least 16 nodes")

    @classmethod
    def from_function(cls, f, n: int, period: float = 1.0):
        return cls(f(np.arange(n) * period / n), period)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return self.period / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __call__(self, x):
        s = np.mod(np.asarray(x, dtype=float), self.period) / self.dx
        i = np.floor(s).astype(int)
        th = s - i
        i %= self.n
        return (1 - th) * self.values[i] + th * self.values[(i + 1) % self.n]

    def nearest(self, x):
        return np.rint(np.mod(np.asarray(x, dtype=float), self.period) / self.dx).astype(int) % self.n

    def backward(self):
        return (self.values - np.roll(self.values, 1)) / self.dx

    def forward(self):
        return (np.roll(self.values, -1) - self.values) / self.dx

    def centered(self):
        return (np.roll(self.values, -1) - np.roll(self.values, 1)) / (2 * self.dx)

    def jumps(self):
        """Slope jump D+ - D- at each node (negative at concave kinks)."""
        return self.forward() - self.backward()

    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.forward())))

    def semiconcavity(self) -> float:
        """Smallest C with phi(x+h) + phi(x-h) - 2 phi(x) <= C h^2 on the grid."""
        return max(float(np.max(self.jumps() / self.dx)), 0.0)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.values + other.values, self.period)
        return ScalarField(self.values + other, self.period)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.values - other.values, self.period)
        return ScalarField(self.values - other, self.period)

    def __mul__(self, a):
        return ScalarField(self.values * a, self.period)

    __rmul__ = __mul__

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["index", "x", "value"])
        for i, (x, v) in enumerate(zip(self.nodes, self.values)):
            w.writerow([i, repr(float(x)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, period: float = 1.0):
        rows = list(csv.DictReader(io.StringIO(text)))
        rows.sort(key=lambda r: int(r["index"]))
        return cls(np.array([float(r["value"]) for r in rows]), period)


def kink_threshold(field: ScalarField, curvature: float = 0.0) -> float:
    """Slope-jump level above which a node is treated as a kink.

    The floor is the median jump of the field itself (smooth nodes dominate
    any semiconcave field) or the jump a C^{1,1} field with the given
    curvature bound would show, whichever is larger.
    """
    floor = max(float(np.median(np.abs(field.jumps()))), curvature * field.dx, 1e-4)
    return KINK_FACTOR * floor


def kink_mask(field: ScalarField, curvature: float = 0.0) -> np.ndarray:
    return np.abs(field.jumps()) > kink_threshold(field, curvature)


# ---------------------------------------------------------- Lax-Oleinik core


def stencil_radius(model: TonelliModel, phi: ScalarField, t: float) -> int:
    """Number of lifted offsets needed to contain every minimizer."""
    radius = model.lambda_phi(phi.lipschitz()) * t
    J = int(math.ceil(radius / phi.dx))
    if radius < phi.dx:
        raise ResolutionError(
            f"search radius {radius:.3g} below grid spacing {phi.dx:.3g}; refine the grid or raise t")
    return J


def _quantize(J: int, n: int) -> int:
    return int(min(J_QUANTUM * math.ceil(J / J_QUANTUM), 4 * n))


def _refine(f, P, Q, sigma_phi, kinks_phi, best, width):
    """Refine a discrete minimum of f = sigma_phi * P + Q along each row.

    P holds field values, Q the action values at the candidate offsets.
    Smooth rows use the parabola through the three best samples; rows whose
    field node is a kink use the piecewise-linear field with a quadratic
    action on each adjacent cell.
    """
    rows = np.arange(f.shape[0])
    k = best
    inner = (k > 0) & (k < width - 1)
    km, kp = np.clip(k - 1, 0, width - 1), np.clip(k + 1, 0, width - 1)
    f0, fm, fp = f[rows, k], f[rows, km], f[rows, kp]
    out = f0.copy()

    # smooth rows
    curv = fp - 2 * f0 + fm
    shift = np.where(curv > 0, (fm - fp) / (2 * np.where(curv > 0, curv, 1.0)), 0.0)
    smooth_ok = inner & ~kinks_phi & (curv > 0) & (np.abs(shift) <= 1)
    vert = f0 - (fp - fm) ** 2 / (8 * np.where(curv > 0, curv, 1.0))
    out = np.where(smooth_ok, np.minimum(vert, f0), out)

    # kinked rows: PL field, quadratic action
    kr = inner & kinks_phi
    if kr.any():
        p0, pm, pp = P[rows, k], P[rows, km], P[rows, kp]
        a0, am, ap = Q[rows, k], Q[rows, km], Q[rows, kp]
        c2 = 0.5 * (ap - 2 * a0 + am)
        c1 = 0.5 * (ap - am)
        best_val = f0.copy()
        for side, slope in ((1.0, pp - p0), (-1.0, p0 - pm)):
            b = sigma_phi * slope + c1
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(c2 > 0, -b / (2 * c2), 0.0)
            s = np.clip(s, min(0.0, side), max(0.0, side))
            val = f0 + b * s + c2 * s * s
            best_val = np.minimum(best_val, val)
        out = np.where(kr, best_val, out)
    return out


def _lax_direct(model: TonelliModel, phi: ScalarField, t: float, sign: int,
                J: Optional[int] = None, refine: bool = True):
    n = phi.n
    if J is None:
        J = stencil_radius(model, phi, t)
    J = min(J, 4 * n)
    tab = action_table(model, n, t, _quantize(J, n))
    Jt = tab.J
    cols = np.arange(-J, J + 1)
    rows = np.arange(n)
    if sign < 0:
        # inf_y phi(y) + A_t(y, x_i), y = x_i - j dx
        src = (rows[:, None] - cols[None, :]) % n
        P = phi.values[src]
        Q = tab.values[src, Jt + cols[None, :]]
        f = P + Q
        sigma = 1.0
    else:
        # sup_y phi(y) - A_t(x_i, y), y = x_i + j dx, minimized as -phi + A
        src = (rows[:, None] + cols[None, :]) % n
        P = phi.values[src]
        Q = tab.values[rows[:, None], Jt + cols[None, :]]
        f = -P + Q
        sigma = -1.0
    best = np.argmin(f, axis=1)
    if refine:
        kinks = kink_mask(phi)[src[rows, best]]
        val = _refine(f, P, Q, sigma, kinks, best, 2 * J + 1)
    else:
        val = f[rows, best]
    out = val if sign < 0 else -val
    return ScalarField(out, phi.period), cols[best]


def _pieces(t: float, max_step: float):
    if t <= max_step:
        return 1
    return 2 ** int(math.ceil(math.log2(t / max_step)))


def t_minus(model: TonelliModel, phi: ScalarField, t: float, max_step: float = MAX_DIRECT_T) -> ScalarField:
    """Negative Lax-Oleinik evolution inf_y {phi(y) + A_t(y, x)}."""
    if not t > 0:
        raise ValueError("t must be positive")
    m = _pieces(t, max_step)
    out = phi
    for _ in range(m):
        out, _ = _lax_direct(model, out, t / m, -1)
    return out


def t_plus(model: TonelliModel, phi: ScalarField, t: float, max_step: float = MAX_DIRECT_T) -> ScalarField:
    """Positive Lax-Oleinik evolution sup_y {phi(y) - A_t(x, y)}."""
    if not t > 0:
        raise ValueError("t must be positive")
    m = _pieces(t, max_step)
    out = phi
    for _ in range(m):
        out, _ = _lax_direct(model, out, t / m, +1)
    return out


def evolve(model: TonelliModel, phi: ScalarField, times: Sequence[float], sign: int,
           step: Optional[float] = None, max_step: float = MAX_DIRECT_T):
    """T_t^{sign} phi at each of the given times.

    Without ``step`` the fields are built incrementally between consecutive
    times. With ``step`` each time is reached as T_r o (T_step)^k with
    t = k step + r; powers of T_step are shared between times. Taking step
    equal to the weak KAM step keeps B_u free of accumulated grid drift,
    because u is an exact fixed point of the discrete T_step.
    """
    times = [float(t) for t in times]
    if any(b < a - 1e-15 for a, b in zip(times, times[1:])):
        raise ValueError("times must be increasing")
    out = []
    if step is None:
        cur, t_prev = phi, 0.0
        for t in times:
            inc = t - t_prev
            if inc > 1e-15:
                m = _pieces(inc, max_step)
                for _ in range(m):
                    cur, _ = _lax_direct(model, cur, inc / m, sign)
            out.append(cur)
            t_prev = t
        return out
    powers = [phi]
    # a remainder too short for the grid to resolve is folded into the last full step
    r_min = phi.dx / model.lambda_phi(phi.lipschitz())
    for t in times:
        k = int(math.floor(t / step + 1e-9))
        r = t - k * step
        if 1e-12 < r < r_min and k > 0:
            k, r = k - 1, r + step
        while len(powers) <= k:
            powers.append(_lax_direct(model, powers[-1], step, sign)[0])
        f = powers[k]
        if r > 1e-12:
            f, _ = _lax_direct(model, f, r, sign)
        out.append(f)
    return out


# ------------------------------------------------------- critical value, wkam


@dataclass
class CriticalValue:
    value: float
    raw: dict               # horizon -> c(T) per node
    extrapolated: dict      # horizon -> Richardson value per node
    spread: float           # max - min over base points

    def __float__(self):
        return self.value


def critical_value(model: TonelliModel, n: int = 512, delta: float = 0.05,
                   horizons: Sequence[float] = (8, 16, 32), tol: float = 1e-3,
                   x0_index: int = 0) -> CriticalValue:
    """Mane critical value from the long-time average of T_T^- 0.

    c(T) = -T_T^- 0(x0) / T behaves like c + b / T; Richardson over the
    doubled horizons removes the 1/T term.
    """
    if not model.domain.compact:
        raise ValueError("critical value needs a compact domain")
    horizons = sorted(horizons)
    phi = ScalarField(np.zeros(n))
    raw = {}
    t = 0.0
    for T in horizons:
        steps = int(round((T - t) / delta))
        for _ in range(steps):
            J = stencil_radius(model, phi, delta)
            phi, _ = _lax_direct(model, phi, delta, -1, J=J)
        t = T
        raw[T] = -phi.values / T
    ext = {}
    for T1, T2 in zip(horizons[:-1], horizons[1:]):
        r = T2 / T1
        ext[T2] = (r * raw[T2] - raw[T1]) / (r - 1)
    keys = sorted(ext)
    final = ext[keys[-1]]
    if len(keys) > 1:
        drift = float(np.max(np.abs(ext[keys[-1]] - ext[keys[-2]])))
        if drift > tol:
            seq = {T: float(ext[T][x0_index]) for T in keys}
            raise ConvergenceError(f"critical value extrapolation drifts by {drift:.3g}", best=seq)
    return CriticalValue(float(final[x0_index]), raw, ext, float(final.max() - final.min()))


@dataclass
class WeakKamSolution:
    u: ScalarField
    c0: float
    residual: float
    delta: float
    converged: bool = True
    iterations: int = 0
    residuals: dict = field(default_factory=dict)


def fixed_point_residual(model, u: ScalarField, c0: float, t: float) -> float:
    """||T_t^- u + c0 t - u||_inf with a single direct convolution when possible."""
    if t <= MAX_DIRECT_T:
        v, _ = _lax_direct(model, u, t, -1)
    else:
        v = t_minus(model, u, t)
    return float(np.max(np.abs(v.values + c0 * t - u.values)))


def weak_kam_solve(model: TonelliModel, delta: float = 0.05, tol: float = 1e-10,
                   n: int = 512, c0: Optional[float] = None, max_iter: int = 4000) -> WeakKamSolution:
    """Fixed point of phi -> T_delta^- phi + c0 delta, pinned to 0 at the first node."""
    if not 0 < delta <= 0.5:
        raise ValueError("delta must lie in (0, 0.5]")
    if c0 is None:
        c0 = critical_value(model, n=n, delta=delta).value
    phi = ScalarField(np.zeros(n))
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        J = stencil_radius(model, phi, delta)
        nxt, _ = _lax_direct(model, phi, delta, -1, J=J)
        nxt = nxt + c0 * delta
        diff = nxt.values - phi.values
        res = float(np.max(np.abs(diff)))
        spread = float(np.ptp(diff))
        phi = nxt - nxt.values[0]
        # an error in c0 shows up as a uniform drift; the shape has converged
        # once the increment is constant
        if res <= tol or spread <= tol:
            break
    residuals = {}
    for t in (delta, 2 * delta, 4 * delta):
        residuals[t] = fixed_point_residual(model, phi, c0, t)
    worst = max(residuals.values())
    converged = res <= tol or spread <= tol
    if not converged:
        log.warning("weak KAM iteration stopped at residual %.3g after %d steps", res, it)
    return WeakKamSolution(phi, float(c0), worst, delta, converged, it, residuals)


# ------------------------------------------------------- superdifferentials


def field_gradient(field: ScalarField, x, curvature: float = 0.0):
    """Gradient of a grid field at arbitrary points.

    Centered node differences are interpolated linearly; inside a cell that
    touches a flagged kink the cell slope is used instead.
    """
    x = np.asarray(x, dtype=float)
    g = field.centered()
    kinks = kink_mask(field, curvature)
    s = np.mod(x, field.period) / field.dx
    i = np.floor(s).astype(int) % field.n
    th = s - np.floor(s)
    j = (i + 1) % field.n
    smooth = (1 - th) * g[i] + th * g[j]
    cell = (field.values[j] - field.values[i]) / field.dx
    return np.where(kinks[i] | kinks[j], cell, smooth)


@dataclass
class SuperdifferentialEstimate:
    x: float
    reachable: np.ndarray
    hull: tuple
    lifted: int = 0

    @property
    def diameter(self) -> float:
        return float(self.hull[1] - self.hull[0])

    @property
    def singular(self) -> bool:
        return self.diameter > 0

    def contains(self, p, tol: float = 0.0) -> bool:
        return bool(self.hull[0] - tol <= p <= self.hull[1] + tol)


def _kink_cluster(kinks: np.ndarray, x: float, dx: float):
    n = kinks.size
    s = (x % 1.0) / dx
    a = int(np.floor(s)) % n
    b = (a + 1) % n
    at_node = abs(s - round(s)) < 1e-9
    seeds = [int(round(s)) % n] if at_node else [a, b]
    seeds = [k for k in seeds if kinks[k]]
    if not seeds:
        return None
    lo = hi = seeds[0]
    if len(seeds) == 2:
        hi = seeds[1]
    steps = 0
    while kinks[(lo - 1) % n] and steps < n // 4:
        lo -= 1
        steps += 1
    steps = 0
    while kinks[(hi + 1) % n] and steps < n // 4:
        hi += 1
        steps += 1
    return lo, hi


def one_sided_limits(field: ScalarField, lo: int, hi: int):
    """Left slope limit at node lo and right slope limit at node hi.

    Both are extrapolated to second order from the neighbouring smooth cells.
    """
    v, n, dx = field.values, field.n, field.dx
    b0 = (v[lo % n] - v[(lo - 1) % n]) / dx
    b1 = (v[(lo - 1) % n] - v[(lo - 2) % n]) / dx
    f0 = (v[(hi + 1) % n] - v[hi % n]) / dx
    f1 = (v[(hi + 2) % n] - v[(hi + 1) % n]) / dx
    return 1.5 * b0 - 0.5 * b1, 1.5 * f0 - 0.5 * f1


def arnaud_lift(model: TonelliModel, field: ScalarField, x: float, t_probe: float):
    """Covectors of Phi_H^t(graph D T_t^+ phi) landing within half a cell of x."""
    plus = t_plus(model, field, t_probe)
    radius = model.lambda_phi(field.lipschitz()) * t_probe
    k = int(math.ceil(radius / field.dx)) + 1
    i0 = int(np.rint((x % 1.0) / field.dx))
    idx = np.arange(i0 - k, i0 + k + 1)
    y = idx * field.dx
    p = field_gradient(plus, y, curvature=1.0 / t_probe)
    xe, pe = flow_map(model, y, p, t_probe)
    hit = np.abs(model.domain.displacement(x, xe)) <= 0.5 * field.dx
    return pe[hit]


def superdifferential(model: TonelliModel, phi, x: float, t_probe: float = 0.01,
                      lift: bool = True) -> SuperdifferentialEstimate:
    """Estimate D+phi(x) from one-sided grid limits and the Arnaud lift."""
    field = phi.u if isinstance(phi, WeakKamSolution) else phi
    model.check(x)
    kinks = kink_mask(field)
    cl = _kink_cluster(kinks, float(x), field.dx)
    if cl is None:
        g = float(field_gradient(field, x))
        return SuperdifferentialEstimate(float(x), np.array([g]), (g, g))
    left, right = one_sided_limits(field, *cl)
    reach = [left, right]
    lifted = 0
    if lift and t_probe > 0:
        extra = arnaud_lift(model, field, float(x), t_probe)
        lifted = extra.size
        reach.extend(extra.tolist())
    reach = np.array(reach)
    # the lift can only fill the fan between the one-sided limits; anything
    # outside is flow/grid error and is clipped to keep the hull grid-limited
    lo, hi = min(left, right), max(left, right)
    return SuperdifferentialEstimate(float(x), np.clip(reach, lo, hi), (lo, hi), lifted)


def p_sharp(model: TonelliModel, estimate: SuperdifferentialEstimate, x=None) -> float:
    """Minimal-energy covector of the hull: argmin H(x, p) over D+phi(x).

    For H = |p|^2/2 + V this is the hull point closest to 0.
    """
    if model.dim != 1:
        raise NotImplementedError("p_sharp is realized on T^1 only")
    lo, hi = estimate.hull
    return float(np.clip(0.0, lo, hi))


# ------------------------------------------------------------ cut time


@dataclass
class CutData:
    t_grid: np.ndarray
    B: np.ndarray              # (len(t_grid), n)
    tau: ScalarField           # inf where the last probe still passes
    sing_mask: np.ndarray
    tol_B: float
    c0: float
    residual: float

    def summary(self) -> dict:
        tau = self.tau.values
        fin = tau[np.isfinite(tau)]
        return {
            "c0": self.c0,
            "residual": self.residual,
            "tol_B": self.tol_B,
            "sing_nodes": np.flatnonzero(self.sing_mask).tolist(),
            "tau_stats": {
                "min": float(fin.min()) if fin.size else None,
                "max": float(fin.max()) if fin.size else None,
                "mean": float(fin.mean()) if fin.size else None,
                "infinite": int(np.sum(~np.isfinite(tau))),
            },
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["index", "x", "tau", "singular"] + [f"B@{t:.6g}" for t in self.t_grid])
        for i, x in enumerate(self.tau.nodes):
            w.writerow([i, repr(float(x)), repr(float(self.tau.values[i])), int(self.sing_mask[i])]
                       + [repr(float(b)) for b in self.B[:, i]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, allow_nan=False)


def default_t_grid(t_max: float = 4.0, fine: float = 0.005, fine_until: float = 0.5,
                   first: float = 0.001):
    """Probes of spacing ``first`` below ``fine``, spacing ``fine`` up to fine_until,
    then alternating ratio 1.5 and 4/3 steps to t_max.

    The short head resolves cut times of points a few cells from a kink.
    """
    k = int(round(fine_until / fine))
    grid = list(first * np.arange(1, int(round(fine / first))))
    grid += list(fine * np.arange(1, k + 1))
    t, up = fine_until, True
    while t < t_max - 1e-12:
        t = min(t * (1.5 if up else 4 / 3), t_max)
        grid.append(t)
        up = not up
    return np.array(grid)


def resolvable_t_grid(model: TonelliModel, field: ScalarField, t_grid=None) -> np.ndarray:
    """Default probes that the grid can see: the search radius must reach one cell."""
    t_grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    t_min = field.dx / model.lambda_phi(field.lipschitz())
    return t_grid[t_grid >= t_min * (1 + 1e-12)]


def probe_spacing(t_grid, value) -> float:
    """Largest probe gap next to ``value`` (the resolution of a cut time read there)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if math.isinf(value) or t_grid.size < 2:
        return float(t_grid[0])
    k = int(np.searchsorted(t_grid, value))
    lo, hi = max(k - 1, 0), min(k + 1, t_grid.size - 1)
    return float(np.max(np.diff(np.concatenate([[0.0], t_grid]))[lo:hi + 1]))


def cut_times_from_B(t_grid, B, tol_B):
    """tau = largest probe of the leading run with B <= tol_B (0 if none).

    B_u(., x) is non-decreasing in t, so the first failing probe ends the
    calibrated range; inf when no probe fails.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    ok = np.asarray(B) <= tol_B
    run = np.cumprod(ok, axis=0).astype(bool)
    count = run.sum(axis=0)
    tau = np.where(count == 0, 0.0, t_grid[np.maximum(count - 1, 0)])
    return np.where(count == len(t_grid), np.inf, tau)


def tolerance_B(wk: WeakKamSolution, floor: float = B_FLOOR) -> float:
    """3x the fixed-point residual, floored by the grid consistency error of u."""
    return max(3.0 * wk.residual, floor)


def b_fields(model, wk: WeakKamSolution, t_grid):
    plus = evolve(model, wk.u, t_grid, +1, step=wk.delta)
    return np.array([wk.u.values - p.values + wk.c0 * t for p, t in zip(plus, t_grid)])


def cut_data(model: TonelliModel, wk: WeakKamSolution, t_grid=None,
             tol_B: Optional[float] = None) -> CutData:
    t_grid = resolvable_t_grid(model, wk.u) if t_grid is None else np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0:
        raise ValueError("t_grid must be positive and strictly increasing")
    B = b_fields(model, wk, t_grid)
    if tol_B is None:
        tol_B = tolerance_B(wk)
    tau = cut_times_from_B(t_grid, B, tol_B)
    return CutData(t_grid, B, ScalarField(tau, wk.u.period), kink_mask(wk.u),
                   float(tol_B), wk.c0, wk.residual)


def cut_time(model: TonelliModel, wk: WeakKamSolution, x: float, t_grid=None,
             tol_B: Optional[float] = None, data: Optional[CutData] = None) -> float:
    """tau_u(x) from B_u(t, x) interpolated between nodes."""
    if data is None:
        data = cut_data(model, wk, t_grid, tol_B)
    s = (x % 1.0) / data.tau.dx
    i = int(np.floor(s)) % data.tau.n
    th = s - np.floor(s)
    j = (i + 1) % data.tau.n
    Bx = (1 - th) * data.B[:, i] + th * data.B[:, j]
    return float(cut_times_from_B(data.t_grid, Bx[:, None], data.tol_B)[0])


# ---------------------------------------------------- intrinsic characteristic


def characteristic_endpoint(model: TonelliModel, plus: ScalarField, x, t: float):
    """pi o Phi_H^t(x, D T_t^+ phi(x)) for arrays of base points."""
    p = field_gradient(plus, x, curvature=1.0 / t)
    xe, _ = flow_map(model, np.asarray(x, dtype=float), p, t)
    return xe


def intrinsic_characteristic(model: TonelliModel, phi: ScalarField, x: float, t: float,
                             tie_tol: float = 1e-7, plus: Optional[ScalarField] = None,
                             check: bool = True, intervals: Optional[int] = None) -> float:
    """argmax_y {phi(y) - A_t(x, y)} by grid search and bounded refinement."""
    if not t > 0:
        raise ValueError("t must be positive")
    phi = phi.u if isinstance(phi, WeakKamSolution) else phi
    dx = phi.dx
    J = stencil_radius(model, phi, t)
    K = intervals or table_intervals(t)
    x = float(x)
    # candidates on the field's grid lifted around x
    base = np.rint(x / dx)
    ys = (base + np.arange(-J, J + 1)) * dx
    _, S, conv, _ = solve_curves(model, np.full_like(ys, x), ys, t, K)
    f = phi(ys) - S
    k = int(np.argmax(f))
    rivals = np.flatnonzero((f >= f[k] - tie_tol) & (np.abs(np.arange(f.size) - k) > 2))
    if rivals.size:
        raise AmbiguityError(
            f"argmax at x={x:.6g}, t={t:.4g} is attained near {ys[k]:.6g} and {ys[rivals[0]]:.6g}",
            candidates=[float(ys[k])] + [float(ys[r]) for r in rivals])

    def neg(y):
        _, s, _, _ = solve_curves(model, np.array([x]), np.array([y]), t, K)
        return -(float(phi(y)) - float(s[0]))

    lo, hi = ys[max(k - 1, 0)], ys[min(k + 1, f.size - 1)]
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    y = float(res.x) if -res.fun >= f[k] else float(ys[k])
    if check:
        if plus is None:
            plus = t_plus(model, phi, t)
        ye = float(characteristic_endpoint(model, plus, x, t))
        gap = abs(float(model.domain.displacement(ye, y)))
        if gap > 2 * dx:
            raise AmbiguityError(
                f"grid argmax {y:.6g} and characteristic endpoint {ye:.6g} differ by {gap:.3g}",
                candidates=[y, ye])
    return float(model.domain.reduce(y))
