"""Compiled inner loops for action tables (one pair per Newton solve)."""
import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi


@njit(cache=True)
def _pot(kind, amp, coef, x):
    if kind == 0:
        return 0.0, 0.0, 0.0
    if kind == 1:
        c = np.cos(TWO_PI * x)
        s = np.sin(TWO_PI * x)
        return amp * c, -amp * TWO_PI * s, -amp * TWO_PI * TWO_PI * c
    n = coef.shape[1]
    xm = x - np.floor(x)
    i = int(xm * n)
    if i >= n:
        i = n - 1
    d = xm - i / n
    c0, c1, c2, c3 = coef[0, i], coef[1, i], coef[2, i], coef[3, i]
    v = ((c0 * d + c1) * d + c2) * d + c3
    dv = (3.0 * c0 * d + 2.0 * c1) * d + c2
    d2v = 6.0 * c0 * d + 2.0 * c1
    return v, dv, d2v


@njit(cache=True)
def _action(kind, amp, coef, eta, h):
    K = eta.shape[0] - 1
    s = 0.0
    for k in range(K):
        dv = eta[k + 1] - eta[k]
        s += dv * dv / (2.0 * h)
    pot = 0.0
    for k in range(K + 1):
        v, _, _ = _pot(kind, amp, coef, eta[k])
        w = 0.5 if (k == 0 or k == K) else 1.0
        pot += w * v
    return s - h * pot


@njit(cache=True, nogil=True)
def solve_pairs(kind, amp, coef, a, b, t, K, tol, maxiter):
    """Values of the minimized discrete action for each pair; conv flags."""
    B = a.shape[0]
    out = np.empty(B)
    conv = np.zeros(B, np.bool_)
    h = t / K
    n = K - 1
    eta = np.empty(K + 1)
    trial = np.empty(K + 1)
    g = np.empty(max(n, 1))
    diag = np.empty(max(n, 1))
    D = np.empty(max(n, 1))
    y = np.empty(max(n, 1))
    step = np.empty(max(n, 1))
    off = -1.0 / h
    eps = 2.220446049250313e-16
    for p in range(B):
        for k in range(K + 1):
            eta[k] = a[p] + (b[p] - a[p]) * k / K
        if n == 0:
            out[p] = _action(kind, amp, coef, eta, h)
            conv[p] = True
            continue
        scale = 1.0 + max(abs(a[p]), abs(b[p]))
        gtol = max(tol, 64.0 * eps * scale / h)
        S = _action(kind, amp, coef, eta, h)
        ok_all = False
        for it in range(maxiter):
            gmax = 0.0
            for k in range(n):
                _, dv, d2v = _pot(kind, amp, coef, eta[k + 1])
                g[k] = (2.0 * eta[k + 1] - eta[k] - eta[k + 2]) / h - h * dv
                diag[k] = 2.0 / h - h * d2v
                if abs(g[k]) > gmax:
                    gmax = abs(g[k])
            if gmax <= gtol:
                ok_all = True
                break
            shift = 0.0
            for attempt in range(60):
                D[0] = diag[0] + shift
                y[0] = -g[0]
                pd = D[0] > 0
                for k in range(1, n):
                    lk = off / D[k - 1]
                    D[k] = diag[k] + shift - lk * off
                    y[k] = -g[k] - lk * y[k - 1]
                    if D[k] <= 0:
                        pd = False
                if pd:
                    break
                shift = 1e-3 * (2.0 / h) if shift == 0.0 else 4.0 * shift
            step[n - 1] = y[n - 1] / D[n - 1]
            for k in range(n - 2, -1, -1):
                step[k] = (y[k] - off * step[k + 1]) / D[k]
            slope = 0.0
            length = 0.0
            for k in range(n):
                slope += g[k] * step[k]
            for k in range(K):
                length += abs(eta[k + 1] - eta[k])
            slack = 1e-14 * (1.0 + abs(S) + length / h)
            alpha = 1.0
            accepted = False
            for ls in range(50):
                trial[0] = eta[0]
                trial[K] = eta[K]
                for k in range(n):
                    trial[k + 1] = eta[k + 1] + alpha * step[k]
                St = _action(kind, amp, coef, trial, h)
                if St <= S + 1e-4 * alpha * slope + slack:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            for k in range(K + 1):
                eta[k] = trial[k]
            S = St
        if not ok_all:
            gmax = 0.0
            for k in range(n):
                _, dv, _ = _pot(kind, amp, coef, eta[k + 1])
                gk = (2.0 * eta[k + 1] - eta[k] - eta[k + 2]) / h - h * dv
                if abs(gk) > gmax:
                    gmax = abs(gk)
            ok_all = gmax <= 10.0 * gtol
        out[p] = _action(kind, amp, coef, eta, h)
        conv[p] = ok_all
    return out, conv
