"""Figure rendering for experiment reports.

Every experiment writes its figures next to the delimited output so a run
directory is self-contained.  The style block keeps figures compact and
print-friendly; nothing here affects the numerical artifacts.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)
_WIDTH = 6.0

STYLE = {
    "figure.figsize": (_WIDTH, _WIDTH * _GOLDEN),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def save_figure(fig, path) -> str:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path.name


def action_comparison_figure(taus, I_path, J_path, eps, path):
    """Measured actions against the averaged solution, one panel per mode."""
    with plt.rc_context(STYLE):
        k_max = I_path.shape[1]
        fig, axes = plt.subplots(k_max, 1, sharex=True,
                                 figsize=(_WIDTH, 1.8 * k_max))
        axes = np.atleast_1d(axes)
        for k, ax in enumerate(axes):
            ax.plot(taus, I_path[:, k], label=f"$I_{k + 1}$ (measured)")
            ax.plot(taus, J_path[:, k], "--", label=f"$J_{k + 1}$ (averaged)")
            ax.set_ylabel(f"mode {k + 1}")
            ax.legend(loc="best", fontsize=7)
        axes[-1].set_xlabel(r"slow time $\tau$")
        axes[0].set_title(rf"actions vs averaged solution, $\epsilon$={eps:g}")
        return save_figure(fig, path)


def sweep_figure(eps_values, rho_values, path, ylabel="deviation"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.loglog(eps_values, rho_values, "o-")
        ax.set_xlabel(r"$\epsilon$")
        ax.set_ylabel(ylabel)
        ax.set_title(f"{ylabel} across the sweep")
        return save_figure(fig, path)


def weyl_figure(reports, path):
    """Modulus of every tracked Weyl statistic, grouped by epsilon."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for rep in reports:
            moduli = rep.moduli()
            keys = sorted(moduli)
            vals = [moduli[s] for s in keys]
            ax.plot(range(len(keys)), vals, "o-", ms=3,
                    label=rf"$\epsilon$={rep.epsilon:g}")
        ax.set_xlabel("statistic index (lexicographic in s)")
        ax.set_ylabel(r"$|\langle e^{i s\cdot\varphi}\rangle|$")
        ax.set_yscale("log")
        ax.legend()
        ax.set_title("equidistribution statistics")
        return save_figure(fig, path)


def rate_series_figure(series, path):
    """series: list of (eps, taus, rates)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for eps, taus, rates in series:
            ax.plot(taus, rates, label=rf"$\epsilon$={eps:g}")
        ax.set_xlabel(r"slow time $\tau$")
        ax.set_ylabel("volume growth rate $r$")
        ax.legend()
        ax.set_title("quasi-invariance rate series")
        return save_figure(fig, path)


def discriminant_figure(lams, deltas, spectrum, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(lams, deltas, label=r"$\Delta(\lambda)$")
        ax.axhline(2.0, color="k", lw=0.6)
        ax.axhline(-2.0, color="k", lw=0.6)
        targets = [2.0 * (-1.0) ** ((i + 1) // 2)
                   for i in range(len(spectrum.lambdas))]
        ax.plot(spectrum.lambdas, targets, "r.", ms=5, label="eigenvalues")
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel(r"$\Delta$")
        ax.set_ylim(-4, 4)
        ax.legend()
        ax.set_title("Hill discriminant")
        return save_figure(fig, path)


def convergence_figure(m_values, errors, path, ylabel="sup error"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.loglog(m_values, errors, "s-")
        ax.set_xlabel("Galerkin dimension m")
        ax.set_ylabel(ylabel)
        ax.set_title("truncation convergence")
        return save_figure(fig, path)


def conservation_figure(taus, functionals, path):
    """functionals: dict name -> series of relative drifts."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, series in functionals.items():
            ax.semilogy(taus, np.maximum(np.abs(series), 1e-18), label=name)
        ax.set_xlabel(r"$\tau$")
        ax.set_ylabel("relative drift")
        ax.legend()
        ax.set_title("conserved functionals along the run")
        return save_figure(fig, path)
