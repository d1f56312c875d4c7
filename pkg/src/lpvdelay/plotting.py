"""Matplotlib figures written to files next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 150,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_trace(trace, path, title: str | None = None) -> Path:
    """Plant states, control input and scheduling signals over time."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.4, 6.0))
        for i in range(trace.x_p.shape[1]):
            axes[0].plot(trace.t, trace.x_p[:, i], lw=1.0, label=f"$x_{{{i + 1}}}$")
        axes[0].set_ylabel("state")
        axes[0].legend(loc="upper right")
        for i in range(trace.u.shape[1]):
            axes[1].plot(trace.t, trace.u[:, i], lw=1.0, color="C3", label="$u$" if i == 0 else None)
        axes[1].set_ylabel("control")
        for i in range(trace.rho.shape[1]):
            axes[2].plot(trace.t, trace.rho[:, i], lw=1.0, label=r"$\rho$" if i == 0 else None)
        axes[2].plot(trace.t, trace.tau, lw=1.0, color="C2", label=r"$\tau$")
        for i in range(trace.d.shape[1]):
            axes[2].plot(trace.t, trace.d[:, i], lw=1.0, ls="--", color="0.4", label="$d$" if i == 0 else None)
        axes[2].set_ylabel("signals")
        axes[2].set_xlabel("t [s]")
        axes[2].legend(loc="upper right", ncol=3)
        if title:
            axes[0].set_title(title)
        return _save(fig, path)


def plot_gains(schedule, path) -> Path:
    """Entries of F_c and H_c across a one-dimensional grid."""
    rho = np.array([p[0] for p in schedule.points])
    F = np.stack(schedule.F_c)
    H = np.stack(schedule.H_c)
    with plt.rc_context(STYLE):
        fig, (a0, a1) = plt.subplots(1, 2, figsize=(8.0, 3.5))
        for i in range(F.shape[1]):
            for j in range(F.shape[2]):
                a0.plot(rho, F[:, i, j], marker="o", ms=3, lw=1.0, label=f"F[{i},{j}]")
        for i in range(H.shape[1]):
            for j in range(H.shape[2]):
                a1.plot(rho, H[:, i, j], marker="o", ms=3, lw=1.0, label=f"H[{i},{j}]")
        a0.set_xlabel(r"$\rho$")
        a1.set_xlabel(r"$\rho$")
        a0.set_title("$F_c$")
        a1.set_title("$H_c$")
        a0.legend(fontsize=6, ncol=2)
        a1.legend(fontsize=6)
        return _save(fig, path)


def plot_table(columns, rows, path) -> Path:
    """Gamma per (r, tau_bar) column, one line per method; infeasible cells omitted."""
    labels = [f"({r:g}, {tb:g})" for r, tb in columns]
    x = np.arange(len(columns))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method, values in rows:
            y = np.array([np.nan if v is None or not np.isfinite(v) else v for v in values], dtype=float)
            ax.plot(x, y, marker="o", ms=4, lw=1.0, label=method)
        ax.set_xticks(x, labels)
        ax.set_xlabel(r"$(r, \bar\tau)$")
        ax.set_ylabel(r"$\gamma$")
        ax.legend()
        return _save(fig, path)


def plot_factorization(omegas, errors: dict, path) -> Path:
    """Spectral-factorization error against frequency, one curve per multiplier."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, err in errors.items():
            ax.loglog(omegas, np.maximum(err, 1e-18), lw=1.0, label=name)
        ax.set_xlabel(r"$\omega$ [rad/s]")
        ax.set_ylabel("max abs error")
        ax.legend()
        return _save(fig, path)
