"""Closed-form periodic test fields on T^1."""
from __future__ import annotations

import numpy as np

from .hopf_lax import ScalarField


def torus_distance(x, center=0.0):
    d = np.mod(np.asarray(x, dtype=float) - center + 0.5, 1.0) - 0.5
    return np.abs(d)


def quadratic_field(n: int, center: float = 0.0, scale: float = 1.0) -> ScalarField:
    """scale * d(x, center)^2 on the grid (semiconcave, kink at center + 1/2)."""
    return ScalarField.from_function(lambda x: scale * torus_distance(x, center) ** 2, n)


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10 - 15 * s + 6 * s * s)


def tent_slope(s, left: float = 3.0, right: float = 1.0, flat: float = 0.3):
    """Derivative profile on s = x - x0 in [0, 1).

    Equal to ``right`` on [0, flat], rises smoothly to ``left`` on
    [0.6, 0.85] and stays there up to s = 1; a sin^2 dip on [flat, flat + 0.35]
    brings the mean slope to zero so the primitive is periodic.
    """
    s = np.mod(s, 1.0)
    rise = (left - right) * _smoothstep((s - 0.6) / 0.25)
    # mean of right + rise over [0, 1)
    mean = right + (left - right) * (1.0 - 0.6 - 0.25 / 2)
    w = 0.35
    inside = (s > flat) & (s < flat + w)
    dip = np.where(inside, np.sin(np.pi * (s - flat) / w) ** 2, 0.0)
    amp = mean / (w / 2)
    return right + rise - amp * dip


def tent_field(n: int, x0: float = 0.5, left: float = 3.0, right: float = 1.0, fine: int = 64) -> ScalarField:
    """Semiconcave periodic field with a single concave kink at x0.

    The one-sided slopes at x0 are ``left`` and ``right``; the field is
    linear with slope ``right`` on [x0, x0 + 0.3].
    """
    m = n * fine
    s = np.arange(m + 1) / m
    g = tent_slope(s[:-1] + 0.5 / m, left, right)
    prim = np.concatenate([[0.0], np.cumsum(g) / m])
    # the dip integral is exact only in the limit; remove the residual drift
    prim -= s * prim[-1]
    vals = prim[:-1][::fine]
    shift = int(round(x0 * n))
    return ScalarField(np.roll(vals, shift))
