"""PNG figures written next to the CSV artifacts (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_image(path, matrix, coords, title: str, truth=None) -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    h = coords[1] - coords[0] if len(coords) > 1 else 1.0
    ext = [coords[0] - h / 2, coords[-1] + h / 2, coords[0] - h / 2, coords[-1] + h / 2]
    im = ax.imshow(matrix, origin="lower", extent=ext, cmap="magma", vmin=0, vmax=1)
    if truth is not None and len(truth):
        t = np.asarray(truth)
        ax.plot(t[:, 0], t[:, 1], "c+", ms=8, mew=1.2, label="true")
        ax.legend(loc="upper right", fontsize=7)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    return _save(fig, path)


def plot_support_traces(path, traces, max_traces: int = 4) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 3.2))
    for tr in traces[:max_traces]:
        line, = ax.plot(tr.slow_times, tr.support * 1e9, lw=0.6, alpha=0.6)
        if tr.smoothed is not None:
            ax.plot(tr.slow_times, tr.smoothed * 1e9, color=line.get_color(), lw=1.4,
                    label=f"receiver {tr.receiver_index}")
        if len(tr.peak_times):
            vals = np.interp(tr.peak_times, tr.slow_times,
                             tr.smoothed if tr.smoothed is not None else tr.support)
            ax.plot(tr.peak_times, vals * 1e9, "k.", ms=5)
    ax.set_xlabel("slow time [s]")
    ax.set_ylabel("support [ns]")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_eigen_spectrum(path, eigenvalues, title: str = "eigenvalues") -> Path:
    lam = np.asarray(eigenvalues, float)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.semilogy(np.arange(1, len(lam) + 1), lam / lam[0], "o-")
    ax.set_xlabel("index")
    ax.set_ylabel("lambda_i / lambda_1")
    ax.set_title(title)
    return _save(fig, path)


def plot_loss_slice(path, matrix, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    im = ax.imshow(np.log10(np.asarray(matrix) + 1e-12), origin="lower", aspect="auto",
                   extent=[0, 2 * np.pi, 0, np.pi], cmap="viridis")
    ax.set_xlabel("phi [rad]")
    ax.set_ylabel("theta [rad]")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="log10 loss")
    return _save(fig, path)


def plot_curves(path, x, curves: dict, xlabel: str, ylabel: str, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, y in curves.items():
        ax.plot(x, y, "o-", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=7)
    return _save(fig, path)
