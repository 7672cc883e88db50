"""Render evaluation reports as figures (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# no creation timestamps in the PNG metadata
_SAVEFIG = dict(dpi=120, metadata={"Software": None})


def _palette(n):
    cmap = plt.get_cmap("tab10")
    return [cmap(i % 10) for i in range(n)]


def render_rank_distribution(report: dict, meta: str, path: Path):
    """Blob plot: per-selector rank frequencies with mean rank and std whiskers."""
    dist = report["rank_distributions"][meta]
    selectors = sorted(dist, key=lambda s: dist[s]["mean_rank"])
    n_boot = report["config"]["n_boot"]
    fig, ax = plt.subplots(figsize=(1.3 * len(selectors) + 2.5, 4.0))
    for x, sel in enumerate(selectors):
        freqs = dist[sel]["frequencies"]
        ranks = np.array([float(r) for r in freqs])
        counts = np.array([freqs[r] for r in freqs], dtype=float)
        ax.scatter(
            np.full_like(ranks, x),
            ranks,
            s=900.0 * counts / n_boot + 5.0,
            alpha=0.45,
            color="tab:blue",
            edgecolors="none",
            zorder=2,
        )
        mean, std = dist[sel]["mean_rank"], dist[sel]["std_rank"]
        ax.errorbar(x, mean, yerr=std, fmt="x", color="black", capsize=4, zorder=3)
    ax.set_xticks(range(len(selectors)))
    ax.set_xticklabels(selectors, rotation=30, ha="right")
    ax.set_ylabel("rank (1 = best)")
    ax.set_title(f"{meta}: bootstrapped selector ranks (n={n_boot})")
    ax.invert_yaxis()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def render_multishot_curves(report: dict, meta: str, mode: str, path: Path):
    curves = report["multi_shot_curves"][meta][mode]
    selectors = sorted(curves)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for color, sel in zip(_palette(len(selectors)), selectors):
        ks = sorted(curves[sel], key=int)
        ax.plot([int(k) for k in ks], [curves[sel][k] for k in ks], "o-", label=sel, color=color)
    ax.set_xlabel("shots k")
    ax.set_ylabel(meta)
    ax.set_title(f"{meta} over top-k suggestions ({mode})")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def render_win_rates(report: dict, path: Path):
    per_scenario = report["win_rates"]["per_scenario"]
    scenarios = sorted(per_scenario)
    selectors = sorted(report["win_rates"]["mean"])
    width = 0.8 / len(selectors)
    fig, ax = plt.subplots(figsize=(1.8 * len(scenarios) + 3.0, 4.0))
    xs = np.arange(len(scenarios) + 1)
    for i, (color, sel) in enumerate(zip(_palette(len(selectors)), selectors)):
        vals = [per_scenario[sc][sel] for sc in scenarios] + [report["win_rates"]["mean"][sel]]
        ax.bar(xs + i * width, vals, width=width, label=sel, color=color)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(scenarios + ["mean"], rotation=20, ha="right")
    ax.set_ylabel("win rate (%)")
    ax.set_title("selector win rates per scenario")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def render_all(report: dict, fig_dir) -> list[Path]:
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for meta in sorted(report["rank_distributions"]):
        path = fig_dir / f"ranking_{meta}.png"
        render_rank_distribution(report, meta, path)
        written.append(path)
    for meta in sorted(report["multi_shot_curves"]):
        for mode in sorted(report["multi_shot_curves"][meta]):
            path = fig_dir / f"multishot_{meta}_{mode}.png"
            render_multishot_curves(report, meta, mode, path)
            written.append(path)
    path = fig_dir / "win_rates.png"
    render_win_rates(report, path)
    written.append(path)
    return written
