"""Figure rendering for the CLI report paths (written next to the data files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# Stripped metadata keeps PNG output byte-identical across reruns.
_SAVEKW = {"dpi": 130, "metadata": {"Software": None}}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)


def occurrence_map_figure(eq_map, path) -> None:
    """Fig-5-style grid: dominant profile per (lambda, mu) cell, inner-square
    size proportional to its occurrence; grey cells are inconsistent."""
    lams, mus = eq_map.lambdas, eq_map.mus
    profiles = sorted({p for c in eq_map.cells.values() for p in c.occurrence})
    cmap = plt.get_cmap("tab10")
    color = {p: cmap(i % 10) for i, p in enumerate(profiles)}
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(lams), 1.0 + 0.8 * len(mus)))
    for xi, lam in enumerate(lams):
        for yi, mu in enumerate(mus):
            cell = eq_map.cells[(lam, mu)]
            ax.add_patch(plt.Rectangle((xi, yi), 1, 1, facecolor="white",
                                       edgecolor="black", linewidth=0.5))
            if cell.inconsistent:
                ax.add_patch(plt.Rectangle((xi, yi), 1, 1, facecolor="0.6",
                                           edgecolor="black", linewidth=0.5))
                continue
            dom = eq_map.dominant(lam, mu)
            if dom is None:
                continue
            occ = cell.occurrence[dom]
            side = np.sqrt(occ)
            off = (1 - side) / 2
            ax.add_patch(plt.Rectangle((xi + off, yi + off), side, side,
                                       facecolor=color[dom], edgecolor="none"))
    ax.set_xlim(0, len(lams))
    ax.set_ylim(0, len(mus))
    ax.set_xticks(np.arange(len(lams)) + 0.5, [f"{v:g}" for v in lams])
    ax.set_yticks(np.arange(len(mus)) + 0.5, [f"{v:g}" for v in mus])
    ax.set_xlabel("arrival rate $\\lambda$ (1/h)")
    ax.set_ylabel("service rate $\\mu$ (1/h)")
    handles = [plt.Rectangle((0, 0), 1, 1, facecolor=color[p]) for p in profiles]
    handles.append(plt.Rectangle((0, 0), 1, 1, facecolor="0.6"))
    ax.legend(handles, profiles + ["inconsistent"], loc="upper left",
              bbox_to_anchor=(1.02, 1), fontsize=8)
    _save(fig, path)


def sobol_figure(indices, path) -> None:
    x = np.arange(len(indices.names))
    fig, ax = plt.subplots(figsize=(1.5 + 0.7 * len(indices.names), 3.5))
    w = 0.38
    ax.bar(x - w / 2, indices.first, w, yerr=indices.first_ci, capsize=2, label="first order")
    ax.bar(x + w / 2, indices.total, w, yerr=indices.total_ci, capsize=2, label="total order")
    ax.set_xticks(x, indices.names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("Sobol index")
    ax.legend()
    _save(fig, path)


def fit_figure(samples, kde, rate_estimate, path) -> None:
    """Service-time KDE overlay (left) and inter-arrival exponential check (right)."""
    samples = np.asarray(samples, dtype=float)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    grid = np.linspace(0, samples.max() * 1.2, 400)
    axes[0].hist(samples, bins=30, density=True, alpha=0.4, label="samples")
    axes[0].plot(grid, kde.pdf(grid), lw=2, label=f"KDE (h={kde.bandwidth:.3g})")
    axes[0].set_xlabel("service time (min)")
    axes[0].set_ylabel("density")
    axes[0].legend()
    gaps = np.sort(samples)
    axes[1].plot(grid, 1 - np.exp(-rate_estimate * grid), lw=2,
                 label=f"Exp fit (rate={rate_estimate:.3g})")
    axes[1].plot(gaps, np.arange(1, gaps.size + 1) / gaps.size, drawstyle="steps-post",
                 alpha=0.7, label="empirical CDF")
    axes[1].set_xlabel("inter-arrival (h)")
    axes[1].set_ylabel("CDF")
    axes[1].legend()
    _save(fig, path)


def shared_matrix_figure(matrix, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(matrix.omega, cmap="viridis", vmin=0)
    ids = matrix.hospital_ids
    ax.set_xticks(range(len(ids)), ids, fontsize=8)
    ax.set_yticks(range(len(ids)), ids, fontsize=8)
    ax.set_xlabel("hospital")
    ax.set_ylabel("hospital")
    fig.colorbar(im, ax=ax, label="shared proportion")
    _save(fig, path)


def sweep_figure(rows, path, highlight: str | None = None) -> None:
    rs = [r.pearson_r for r in rows if not np.isnan(r.pearson_r)]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.hist(rs, bins=30, alpha=0.7)
    if highlight is not None:
        match = [r.pearson_r for r in rows if r.profile == highlight]
        if match:
            ax.axvline(match[0], color="crimson", lw=2, label=f"profile {highlight}")
            ax.legend()
    ax.set_xlabel("Pearson r (simulated vs observed mortality)")
    ax.set_ylabel("profiles")
    _save(fig, path)


def global_time_figure(lambdas, curves, path) -> None:
    """Global-time trends per profile over an arrival-rate sweep."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for profile, values in sorted(curves.items()):
        ax.plot(lambdas, values, marker="o", ms=3, label=profile)
    ax.set_xlabel("arrival rate $\\lambda$ (1/h)")
    ax.set_ylabel("global time")
    ax.legend(fontsize=8)
    _save(fig, path)
