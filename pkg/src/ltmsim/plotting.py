"""Figures written next to the CSV/JSON outputs (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import CONFIGURATION_NAMES  # noqa: E402
from .handover import KPI_NAMES  # noqa: E402
from .kpi import KPI_LABELS, KpiReport  # noqa: E402


def plot_kpis(report: KpiReport, path) -> Path:
    """One bar panel per KPI, bars per configuration with 95% CI whiskers."""
    configs = report.configurations
    fig, axes = plt.subplots(2, 4, figsize=(16, 7), constrained_layout=True)
    colors = plt.cm.tab10(np.arange(len(configs)) % 10)
    x = np.arange(len(configs))
    for ax, kpi in zip(axes.ravel(), KPI_NAMES):
        rows = [report.row(c, kpi) for c in configs]
        mean = np.array([r.mean for r in rows])
        err = np.array([[r.mean - r.ci95_lo for r in rows], [r.ci95_hi - r.mean for r in rows]])
        ax.bar(x, mean, yerr=err, color=colors, capsize=3, edgecolor="black", linewidth=0.5)
        ax.set_title(KPI_LABELS[kpi], fontsize=10)
        ax.set_xticks(x)
        ax.set_xticklabels([str(c) for c in configs])
        if kpi in ("reliability_pct", "resource_reservation_pct"):
            lo = float(np.min([r.ci95_lo for r in rows]))
            ax.set_ylim(max(0.0, lo - 0.5 * (100 - lo) - 0.1), 100.0 if kpi == "reliability_pct" else None)
        ax.grid(axis="y", alpha=0.3)
    handles = [plt.Rectangle((0, 0), 1, 1, color=colors[i]) for i in range(len(configs))]
    fig.legend(handles, [f"{c}: {CONFIGURATION_NAMES[c]}" for c in configs],
               loc="outside lower center", ncol=4, fontsize=9)
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_coverage(uv: np.ndarray, rsrp_dbm: np.ndarray, side: float, n_sub: int, path,
                  title: str = "", vmin: float | None = None, vmax: float | None = None) -> Path:
    """Heat map of zone-local RSRP with the sub-zone grid and per-square means.

    ``uv`` are zone-local coordinates of a regular grid with matching
    ``rsrp_dbm`` values.
    """
    us = np.unique(np.round(uv[:, 0], 9))
    vs = np.unique(np.round(uv[:, 1], 9))
    grid = np.full((len(vs), len(us)), np.nan)
    iu = np.searchsorted(us, np.round(uv[:, 0], 9))
    iv = np.searchsorted(vs, np.round(uv[:, 1], 9))
    grid[iv, iu] = rsrp_dbm
    fig, ax = plt.subplots(figsize=(6, 5), constrained_layout=True)
    step_u = us[1] - us[0] if len(us) > 1 else 1.0
    step_v = vs[1] - vs[0] if len(vs) > 1 else 1.0
    extent = (us[0] - step_u / 2, us[-1] + step_u / 2, vs[0] - step_v / 2, vs[-1] + step_v / 2)
    im = ax.imshow(grid, origin="lower", extent=extent, cmap="viridis", vmin=vmin, vmax=vmax)
    fig.colorbar(im, ax=ax, label="RSRP (dBm)")
    sub = side / n_sub
    for k in range(1, n_sub):
        ax.axhline(k * sub, color="white", lw=0.6)
        ax.axvline(k * sub, color="white", lw=0.6)
    for j in range(n_sub):
        for i in range(n_sub):
            sel = (uv[:, 0] >= i * sub) & (uv[:, 0] < (i + 1) * sub) & (uv[:, 1] >= j * sub) & (uv[:, 1] < (j + 1) * sub)
            if sel.any():
                ax.text((i + 0.5) * sub, (j + 0.5) * sub, f"{np.mean(rsrp_dbm[sel]):.1f}",
                        ha="center", va="center", color="white", fontsize=8)
    ax.set_xlabel("u (m)")
    ax.set_ylabel("v (m)")
    if title:
        ax.set_title(title)
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
