"""Convergence figures rendered next to the CSV results."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rc("axes", linewidth=0.6)
plt.rc("font", size=9)


def plot_h_convergence(tables, path) -> Path:
    """Log-log error against mesh size, one line per pairing and measure."""
    fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.0), constrained_layout=True)
    for table in tables:
        h = [v for v, e in zip(table.h, table.err_u) if e is not None]
        axes[0].loglog(h, [e for e in table.err_u if e is not None], "o-", label=table.pairing)
        h = [v for v, e in zip(table.h, table.err_p) if e is not None]
        axes[1].loglog(h, [e for e in table.err_p if e is not None], "s-", label=table.pairing)
    axes[0].set_ylabel(r"$\|e_u\|_{DG,E}$")
    axes[1].set_ylabel(r"$\sum_k \|\sqrt{c_k}\, e_{p_k}\|$")
    for ax in axes:
        ax.set_xlabel("h")
        ax.grid(True, which="both", lw=0.3, alpha=0.5)
        ax.legend(frameon=False)
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_p_convergence(degrees, err_u, err_p, path, label="") -> Path:
    """Semi-log error against polynomial degree."""
    fig, ax = plt.subplots(figsize=(4.0, 3.0), constrained_layout=True)
    ax.semilogy(degrees, err_u, "o-", label=r"$\|e_u\|_{DG,E}$")
    ax.semilogy(degrees, err_p, "s-", label=r"$\sum_k \|\sqrt{c_k}\, e_{p_k}\|$")
    ax.set_xlabel("degree q")
    ax.set_xticks(list(degrees))
    ax.set_title(label)
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    ax.legend(frameon=False)
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
