"""Figures written next to the CSV artifacts. Write-only; nothing reads them back."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "kamlab",
})


def save(fig, stem: str, formats) -> list:
    """Save fig as stem.<fmt> for each image format; returns written paths."""
    out = []
    for fmt in formats:
        if fmt not in ("svg", "png"):
            continue
        path = f"{stem}.{fmt}"
        meta = {"Date": None} if fmt == "svg" else {}
        fig.savefig(path, format=fmt, dpi=150, bbox_inches="tight", metadata=meta)
        out.append(os.path.basename(path))
    plt.close(fig)
    return out


def field_figure(field, kinks=None, title: str = "", label: str = "u"):
    fig, ax = plt.subplots()
    x = np.append(field.nodes, field.period)
    y = np.append(field.values, field.values[0])
    ax.plot(x, y, color="k", label=label)
    if kinks is not None and np.any(kinks):
        k = np.flatnonzero(kinks)
        ax.plot(field.nodes[k], field.values[k], "o", color="tab:red", ms=4, label="kink nodes")
    ax.set_xlabel("x")
    ax.set_title(title)
    ax.legend(loc="best", frameon=False)
    return fig


def cut_figure(data):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    tau = data.tau.values
    cap = float(data.t_grid[-1])
    shown = np.where(np.isfinite(tau), tau, cap)
    a1.plot(data.tau.nodes, shown, color="k", lw=1)
    a1.set_xlabel("x")
    a1.set_ylabel("cut time (capped at last probe)")
    for k in range(0, data.t_grid.size, max(1, data.t_grid.size // 6)):
        a2.semilogy(data.tau.nodes, np.maximum(data.B[k], 1e-12), lw=0.8,
                    label=f"t = {data.t_grid[k]:.3g}")
    a2.axhline(data.tol_B, color="tab:red", ls="--", lw=0.8)
    a2.set_xlabel("x")
    a2.set_ylabel("B(t, x)")
    a2.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return fig


def trajectory_figure(curve, title: str = ""):
    fig, ax = plt.subplots()
    x = np.unwrap(curve.positions, period=1.0, axis=0)
    for i in range(x.shape[1]):
        ax.plot(curve.times, x[:, i], lw=1)
    ax.set_xlabel("t")
    ax.set_ylabel("particle position (unwrapped)")
    ax.set_title(title)
    return fig


def propagation_figure(times, w1, slope):
    fig, ax = plt.subplots()
    t = np.asarray(times)
    ax.plot(t, w1, "o", color="k", label="W1(nu(t), mu)")
    grid = np.linspace(0.0, t.max(), 50)
    ax.plot(grid, slope * grid, color="tab:blue", label=f"C1 t, C1 = {slope:.3g}")
    ax.set_xlabel("t")
    ax.legend(frameon=False)
    return fig


def curves_figure(result):
    fig, ax = plt.subplots()
    for (i, j), r in sorted(result.per_pair.items()):
        ax.plot(r.times, r.minimizer, lw=1, label=f"{i} -> {j}")
    ax.set_xlabel("s")
    ax.set_ylabel("minimizer (lifted)")
    ax.set_title(f"t = {result.t:g}, cost = {result.value:.6g}")
    if len(result.per_pair) <= 8:
        ax.legend(fontsize=7, frameon=False)
    return fig
