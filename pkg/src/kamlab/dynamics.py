"""Mechanical Tonelli models H(x, p) = |p|^2/2 + V(x) on flat tori and boxes.

Positions on a one-dimensional domain are plain floats (or arrays of any
shape); on a two-dimensional domain the last axis holds the coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, IntegrationError

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------- potentials


class Potential:
    """Smooth potential with analytic first and second derivatives."""

    dim = 1
    periodic = True

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def bounds(self):
        """(min V, max V) over the fundamental domain."""
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def kernel_spec(self):
        """(kind, amplitude, coefficients) for the compiled table kernel."""
        raise NotImplementedError


class ZeroPotential(Potential):
    def __init__(self, dim: int = 1):
        self.dim = dim

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape if self.dim == 1 else x.shape[:-1])

    def grad(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            return np.zeros_like(x)
        return np.zeros(x.shape + (self.dim,))

    def bounds(self):
        return 0.0, 0.0

    def describe(self):
        return {"kind": "zero"}

    def kernel_spec(self):
        return 0, 0.0, np.zeros((4, 1))


class CosinePotential(Potential):
    """V(x) = a * sum_d cos(2 pi x_d)."""

    def __init__(self, amplitude: float = 1.0, dim: int = 1):
        self.amplitude = float(amplitude)
        self.dim = dim

    def value(self, x):
        x = np.asarray(x, dtype=float)
        c = np.cos(TWO_PI * x)
        return self.amplitude * (c if self.dim == 1 else c.sum(axis=-1))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return -self.amplitude * TWO_PI * np.sin(TWO_PI * x)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        d = -self.amplitude * TWO_PI**2 * np.cos(TWO_PI * x)
        if self.dim == 1:
            return d
        return d[..., :, None] * np.eye(self.dim)

    def bounds(self):
        a = abs(self.amplitude) * self.dim
        return -a, a

    def describe(self):
        return {"kind": "cosine", "amplitude": self.amplitude}

    def kernel_spec(self):
        return 1, self.amplitude, np.zeros((4, 1))


class TabulatedPotential(Potential):
    """Periodic cubic spline through samples V(k/n), k = 0..n-1, on T^1."""

    def __init__(self, values: Sequence[float]):
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1 or vals.size < 4:
            raise ValueError("tabulated potential needs at least 4 samples")
        if not np.all(np.isfinite(vals)):
            raise ValueError("tabulated potential has non-finite samples")
        self.values = vals
        n = vals.size
        nodes = np.arange(n + 1) / n
        self._spline = CubicSpline(nodes, np.append(vals, vals[0]), bc_type="periodic")
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)

    def value(self, x):
        return self._spline(np.mod(x, 1.0))

    def grad(self, x):
        return self._d1(np.mod(x, 1.0))

    def hess(self, x):
        return self._d2(np.mod(x, 1.0))

    def bounds(self):
        s = self._spline(np.linspace(0.0, 1.0, 64 * self.values.size, endpoint=False))
        return float(s.min()), float(s.max())

    def describe(self):
        return {"kind": "tabulated", "values": self.values.tolist()}

    def kernel_spec(self):
        return 2, 0.0, np.ascontiguousarray(self._spline.c)


# ------------------------------------------------------------------- domains


@dataclass(frozen=True)
class Torus:
    dim: int = 1
    period: float = 1.0

    compact = True

    def reduce(self, x):
        return np.mod(x, self.period)

    def displacement(self, x, y):
        """Minimal representative of y - x."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return d - self.period * np.round(d / self.period)

    def contains(self, x) -> bool:
        return bool(np.all(np.isfinite(x)))


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    compact = False

    @property
    def dim(self):
        return len(self.lower)

    def reduce(self, x):
        return np.asarray(x, dtype=float)

    def displacement(self, x, y):
        return np.asarray(y, dtype=float) - np.asarray(x, dtype=float)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if self.dim == 1:
            lo, hi = lo[0], hi[0]
        return bool(np.all(np.isfinite(x)) and np.all(x >= lo) and np.all(x <= hi))


# --------------------------------------------------------------------- model


@dataclass(frozen=True)
class Growth:
    """Coefficients of theta_0(|v|) - c0 <= L(x, v) <= theta_1(|v|) + c1.

    For the mechanical Lagrangian theta_0 = theta_1 = r^2/2, so the
    conjugate theta_0^* is s^2/2 as well.
    """

    c0: float
    c1: float

    @staticmethod
    def theta0(r):
        return 0.5 * np.square(r)

    theta1 = theta0

    @staticmethod
    def theta0_star(s):
        return 0.5 * np.square(s)


@dataclass(frozen=True)
class TonelliModel:
    domain: object = field(default_factory=Torus)
    potential: Potential = field(default_factory=ZeroPotential)

    def __post_init__(self):
        if self.domain.dim not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        if self.potential.dim != self.domain.dim:
            raise ValueError("potential and domain dimensions differ")

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def growth(self) -> Growth:
        vmin, vmax = self.potential.bounds()
        return Growth(c0=max(vmax, 0.0), c1=max(-vmin, 0.0))

    def lambda_phi(self, kappa1: float) -> float:
        """Speed bound for Lax-Oleinik minimizers of a kappa1-Lipschitz datum."""
        g = self.growth
        return g.c0 + float(g.theta1(0.0)) + float(g.theta0_star(kappa1 + 1.0)) + g.c1

    def check(self, x):
        if not self.domain.contains(x):
            raise DomainError(f"point {x!r} outside domain {self.domain!r}")

    def _sq(self, v):
        v = np.asarray(v, dtype=float)
        return v * v if self.dim == 1 else np.sum(v * v, axis=-1)

    def describe(self) -> dict:
        dom = self.domain
        if isinstance(dom, Torus):
            d = {"kind": "torus", "dim": dom.dim}
        else:
            d = {"kind": "box", "lower": list(dom.lower), "upper": list(dom.upper)}
        return {"domain": d, "potential": self.potential.describe()}


@dataclass
class PhasePoint:
    x: object
    p: object


def lagrangian(model: TonelliModel, x, v):
    model.check(x)
    return 0.5 * model._sq(v) - model.potential.value(x)


def hamiltonian(model: TonelliModel, x, p):
    model.check(x)
    return 0.5 * model._sq(p) + model.potential.value(x)


def legendre(model: TonelliModel, x, v):
    """p = L_v(x, v); the identity for the mechanical Lagrangian."""
    model.check(x)
    return np.array(v, dtype=float, copy=True) if np.ndim(v) else float(v)


def legendre_inverse(model: TonelliModel, x, p):
    """v = H_p(x, p)."""
    model.check(x)
    return np.array(p, dtype=float, copy=True) if np.ndim(p) else float(p)


# ---------------------------------------------------------------------- flow


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray

    @property
    def end(self) -> PhasePoint:
        return PhasePoint(self.x[-1], self.p[-1])


def verlet(model: TonelliModel, x, p, t: float, steps: int, keep: bool = False):
    """Stormer-Verlet for many phase points at once.

    Positions are reduced to the fundamental domain after every step on a
    torus. Returns the endpoint arrays, or the full (steps+1, ...) history
    when ``keep`` is set.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x, dtype=float, copy=True)
    p = np.array(p, dtype=float, copy=True)
    h = t / steps
    dV = model.potential.grad
    reduce = model.domain.reduce
    xs, ps = ([x.copy()], [p.copy()]) if keep else (None, None)
    g = dV(x)
    for k in range(steps):
        p = p - 0.5 * h * g
        x = reduce(x + h * p)
        g = dV(x)
        p = p - 0.5 * h * g
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise IntegrationError(f"non-finite state at step {k + 1}", step=k + 1)
        if keep:
            xs.append(x.copy())
            ps.append(p.copy())
    if keep:
        return np.array(xs), np.array(ps)
    return x, p


def hamiltonian_flow(model: TonelliModel, phase: PhasePoint, t: float, steps: int) -> Trajectory:
    """Integrate x' = H_p, p' = -H_x for time t (negative t flows backward)."""
    model.check(phase.x)
    xs, ps = verlet(model, phase.x, phase.p, t, steps, keep=True)
    if isinstance(model.domain, Box):
        for k, xk in enumerate(xs):
            if not model.domain.contains(xk):
                raise IntegrationError(f"trajectory left the box at step {k}", step=k)
    return Trajectory(np.linspace(0.0, t, steps + 1), xs, ps)


def flow_map(model: TonelliModel, x, p, t: float, steps: Optional[int] = None):
    """Endpoint of the Hamiltonian flow for arrays of phase points."""
    if steps is None:
        steps = max(8, int(np.ceil(abs(t) * 2000)))
    return verlet(model, x, p, t, steps)
