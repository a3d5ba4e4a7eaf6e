"""Optional PNG figures rendered next to the CSV outputs (Agg backend)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_model", "plot_signatures", "plot_history", "plot_sweep"]


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_model(path, velocity: np.ndarray, dx: float, dz: float, title: str = "",
               cmap: str = "viridis", label: str = "velocity (m/s)"):
    nz, nx = velocity.shape
    fig, ax = plt.subplots(figsize=(7, 3.2))
    im = ax.imshow(velocity, cmap=cmap, aspect="equal",
                   extent=(0, (nx - 1) * dx / 1e3, (nz - 1) * dz / 1e3, 0))
    ax.set_xlabel("x (km)")
    ax.set_ylabel("z (km)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label=label, shrink=0.8)
    return _save(fig, path)


def plot_signatures(path, frequencies, true_sig: np.ndarray, estimates: dict, source: int = 0):
    """Modulus and unwrapped phase of one source's signature against frequency."""
    f = np.asarray(frequencies)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.2))
    a1.plot(f, np.abs(true_sig[:, source]), "k-", lw=2, label="true")
    a2.plot(f, np.unwrap(np.angle(true_sig[:, source])), "k-", lw=2)
    for name, s in estimates.items():
        a1.plot(f, np.abs(s[:, source]), "--", label=name)
        a2.plot(f, np.unwrap(np.angle(s[:, source])), "--")
    a1.set_xlabel("frequency (Hz)")
    a1.set_ylabel("|s|")
    a2.set_xlabel("frequency (Hz)")
    a2.set_ylabel("phase (rad)")
    a1.legend()
    return _save(fig, path)


def plot_history(path, history):
    """Data misfit, PDE misfit and model RE against the global iteration index."""
    fig, axes = plt.subplots(1, 3, figsize=(11, 3))
    k = np.arange(len(history))
    for ax, key, label in zip(axes, ("data_misfit", "pde_misfit", "model_re"),
                              ("data misfit", "PDE misfit", "model RE")):
        y = np.array([getattr(r, key) for r in history], dtype=float)
        ax.plot(k, y)
        if key != "model_re" and np.all(y[np.isfinite(y)] > 0):
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
    return _save(fig, path)


def plot_sweep(path, rows, axis_label: str):
    """Median RE per method against the swept value; ``rows`` as produced by the sweep."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    methods = sorted({r[2] for r in rows})
    groups = sorted({r[0] for r in rows}, key=str)
    for method in methods:
        for g in groups:
            pts = [(r[1], r[3]) for r in rows if r[2] == method and r[0] == g]
            if not pts:
                continue
            x, y = zip(*pts)
            ax.plot(x, y, "o-", label=f"{method} {g}" if len(groups) > 1 else method)
    ax.set_xlabel(axis_label)
    ax.set_ylabel("mean RE")
    ax.legend(fontsize=7)
    return _save(fig, path)
