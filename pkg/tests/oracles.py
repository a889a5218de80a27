"""Independent reference values. Nothing here calls the solvers under test."""
import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline

TWO_PI = 2 * np.pi


def torus_gap(x, y):
    return np.abs(np.mod(np.asarray(y) - np.asarray(x) + 0.5, 1.0) - 0.5)


# ------------------------------------------------------------ pendulum

def pendulum_u(x):
    """Weak KAM solution of H = p^2/2 + cos(2 pi x), c0 = 1, u(0) = 0.

    |Du| = 2 sin(pi x) on [0, 1/2], mirrored on [1/2, 1].
    """
    s = np.minimum(np.mod(x, 1.0), 1.0 - np.mod(x, 1.0))
    return 2.0 / np.pi * (1.0 - np.cos(np.pi * s))


def pendulum_tau(x):
    """Travel time from x to the singular point 1/2 at speed 2 sin(pi s)."""
    s = min(x % 1.0, 1.0 - x % 1.0)
    val, _ = quad(lambda r: 1.0 / (2.0 * np.sin(np.pi * r)), s, 0.5)
    return val


# ------------------------------------------------------------ action

def lattice_action(V, dV, d2V, x, y, t, n=512, m=512, vmax=8.0):
    """A_t(x, y) on T^1 from a Bellman recursion on an n-node x m-step lattice.

    S_{k+1}(x_j) = min_z S_k(z) + (x_j - z)^2 / 2h - h (V(z) + V(x_j)) / 2,
    with z continuous: the nodal minimum is refined by Newton on a periodic
    spline of S_k. The first step from the point mass is exact.
    """
    h = t / m
    nodes = np.arange(n) / n
    d = torus_gap(x, nodes)
    S = d * d / (2 * h) - 0.5 * h * (V(x) + V(nodes))
    w = int(np.ceil(vmax * h * n)) + 2          # search radius in cells
    offs = np.arange(-w, w + 1)
    for _ in range(m - 1):
        ext = np.append(S, S[0])
        spl = CubicSpline(np.append(nodes, 1.0), ext, bc_type="periodic")
        ds = spl.derivative(1)
        d2s = spl.derivative(2)
        cand = (np.arange(n)[:, None] + offs[None, :]) % n
        z = nodes[:, None] + offs[None, :] / n
        tot = S[cand] + (nodes[:, None] - z) ** 2 / (2 * h) - 0.5 * h * V(z)
        k = np.argmin(tot, axis=1)
        z = z[np.arange(n), k]
        for _ in range(8):
            g = ds(np.mod(z, 1.0)) - (nodes - z) / h - 0.5 * h * dV(z)
            H = d2s(np.mod(z, 1.0)) + 1.0 / h - 0.5 * h * d2V(z)
            z = z - g / np.where(H > 0, H, 1.0 / h)
        S = spl(np.mod(z, 1.0)) + (nodes - z) ** 2 / (2 * h) - 0.5 * h * (V(z) + V(nodes))
    j = int(round((y % 1.0) * n)) % n
    return float(S[j])


def zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def cos_V(x):
    return np.cos(TWO_PI * np.asarray(x))


def cos_dV(x):
    return -TWO_PI * np.sin(TWO_PI * np.asarray(x))


def cos_d2V(x):
    return -TWO_PI ** 2 * np.cos(TWO_PI * np.asarray(x))


# ------------------------------------------------------------ flows

def dop853_flow(dV, x, p, t, rtol=1e-12, atol=1e-12):
    """High-order reference endpoint of x' = p, p' = -V'(x) (unreduced x)."""
    sol = solve_ivp(lambda s, z: [z[1], -dV(z[0])], (0.0, t), [x, p], method="DOP853",
                    rtol=rtol, atol=atol)
    return float(sol.y[0, -1]), float(sol.y[1, -1])


# ------------------------------------------------------------ measures

def brute_p_minus(phi_values, action, atoms, weights):
    """inf over nu of phi(nu) + C^t(nu, mu), one grid node per atom.

    ``action(ys, x)`` returns A_t(y, x) for all grid nodes ys. The transport
    cost to a sum of Diracs splits over atoms, so the infimum is taken atom
    by atom over all grid candidates.
    """
    n = phi_values.size
    ys = np.arange(n) / n
    total = 0.0
    for x, w in zip(atoms, weights):
        total += w * float(np.min(phi_values + action(ys, x)))
    return total


def moreau_quadratic(d, t):
    """inf_y d(y,0)^2 + |x - y|^2 / 2t at distance d from 0 (closed form)."""
    return d * d / (1 + 2 * t)
