"""Figure rendering for schedules, evolution histories and reliability grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METHOD_LABELS = {"bonferroni": "JCC-B", "evolutionary": "JCC-P", "scc": "SCC"}
METHOD_COLORS = {"bonferroni": "tab:blue", "evolutionary": "tab:green", "scc": "tab:red"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_convergence(history, path, title: str = "") -> Path:
    """Best and mean population cost per generation."""
    it = [h.iteration for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(it, [h.best_cost for h in history], "o-", label="best")
    mean = np.array([h.mean_cost for h in history], dtype=float)
    ax.plot(np.array(it)[np.isfinite(mean)], mean[np.isfinite(mean)], "s--", label="mean")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_reliability(reports, path) -> Path:
    """Daily reliability boxplots, one panel per ambiguity set."""
    sets = list(dict.fromkeys(r.set for r in reports))
    fig, axes = plt.subplots(1, max(len(sets), 1), figsize=(4.2 * max(len(sets), 1), 3.4), squeeze=False)
    for ax, s in zip(axes[0], sets):
        cell = [r for r in reports if r.set == s and r.ok is not None]
        eps = sorted({r.eps_joint for r in cell}, reverse=True)
        methods = [m for m in METHOD_LABELS if any(r.method == m for r in cell)]
        width = 0.8 / max(len(methods), 1)
        for j, m in enumerate(methods):
            data, pos = [], []
            for i, e in enumerate(eps):
                rep = [r for r in cell if r.method == m and r.eps_joint == e]
                if rep:
                    data.append(rep[0].daily)
                    pos.append(i + (j - (len(methods) - 1) / 2) * width)
            if data:
                bp = ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True, manage_ticks=False)
                for patch in bp["boxes"]:
                    patch.set_facecolor(METHOD_COLORS[m])
                    patch.set_alpha(0.6)
                ax.plot([], [], "s", color=METHOD_COLORS[m], label=METHOD_LABELS[m])
        for i, e in enumerate(eps):
            ax.hlines(100 * (1 - e), i - 0.45, i + 0.45, colors="k", linestyles=":")
        ax.set_xticks(range(len(eps)))
        ax.set_xticklabels([f"{e:g}" for e in eps])
        ax.set_xlabel("joint violation rate")
        ax.set_title(s)
    axes[0][0].set_ylabel("daily reliability (%)")
    axes[0][0].legend(fontsize=8)
    return _save(fig, path)


def plot_dispatch(schedule, path) -> Path:
    """Grid import, net storage output and total SoC per scenario."""
    fig, axes = plt.subplots(3, 1, figsize=(6, 6), sharex=True)
    scen = ["grid"] + (["island"] if schedule.blackout else [])
    for sc in scen:
        d = schedule.scenario(sc)
        t = np.arange(d.pg.shape[0]) * schedule.dt
        style = "-" if sc == "grid" else "--"
        axes[0].step(t, d.pg, style, where="post", label=sc)
        axes[1].step(t, (d.pd - d.pc).sum(axis=1), style, where="post", label=sc)
        axes[2].plot(np.arange(d.soc.shape[0]) * schedule.dt, d.soc.sum(axis=1), style, label=sc)
    if schedule.blackout:
        a, b = schedule.blackout
        for ax in axes:
            ax.axvspan(a * schedule.dt, b * schedule.dt, color="0.9")
    axes[0].set_ylabel("grid (kW)")
    axes[1].set_ylabel("storage net (kW)")
    axes[2].set_ylabel("SoC (kWh)")
    axes[2].set_xlabel("hour")
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def plot_cost_curve(costs: dict, path) -> Path:
    """Cost against joint violation rate; ``costs`` maps a label to ``{eps: cost}``."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, curve in costs.items():
        eps = sorted(curve)
        ax.plot(eps, [curve[e] for e in eps], "o-", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("joint violation rate")
    ax.set_ylabel("cost")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_rolling(trace, path) -> Path:
    fig, axes = plt.subplots(2, 1, figsize=(6, 4), sharex=True)
    t = trace.array("t") * trace.dt
    axes[0].step(t, trace.array("pg"), where="post")
    axes[0].set_ylabel("grid (kW)")
    soc = trace.soc.sum(axis=1)
    axes[1].plot(np.arange(soc.size) * trace.dt, soc)
    axes[1].set_ylabel("SoC (kWh)")
    axes[1].set_xlabel("hour")
    fb = [s.t * trace.dt for s in trace.steps if s.fallback]
    for x in fb:
        axes[0].axvline(x, color="r", alpha=0.3)
    return _save(fig, path)
