"""Figures written to disk (Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .model import GridWorldSpec  # noqa: E402


def _outline(ax, cells, color, lw=2.0):
    for r, c in cells:
        ax.add_patch(Rectangle((c - 0.5, r - 0.5), 1, 1, fill=False, edgecolor=color, lw=lw))


def reward_heatmaps(spec: GridWorldSpec, grids: Sequence[np.ndarray], path, title: str = "") -> Path:
    """One panel per agent: per-cell values, unsafe cells outlined in red,
    init and goal in green."""
    n = len(grids)
    fig, axes = plt.subplots(1, n, figsize=(3.6 * n + 0.6, 3.6), squeeze=False)
    for i, (ax, grid) in enumerate(zip(axes[0], grids)):
        im = ax.imshow(np.asarray(grid), cmap="gray", origin="upper")
        _outline(ax, spec.unsafe, "red")
        _outline(ax, spec.goal, "green", lw=2.5)
        _outline(ax, [spec.init], "green", lw=2.5)
        ax.text(spec.init[1], spec.init[0], "INIT", ha="center", va="center", color="green", fontsize=7)
        for r, c in spec.goal:
            ax.text(c, r, "GOAL", ha="center", va="center", color="green", fontsize=7)
        ax.set_title(f"agent {i}")
        ax.set_xticks(range(spec.side))
        ax.set_yticks(range(spec.side))
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def run_trace(records: Sequence[dict], path, bound: float | None = None) -> Path:
    """Unsafe-reach probability and distance to the expert per iteration."""
    its = [r for r in records if "status" in r]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    x = [r["iteration"] for r in its]
    ax1.plot(x, [r["probability"] for r in its], "o-", ms=3)
    if bound is not None:
        ax1.axhline(bound, color="red", ls="--", lw=1, label="bound")
        ax1.legend(loc="best")
    ax1.set_ylabel("unsafe probability")
    ax2.plot(x, [r["distance"] for r in its], "o-", ms=3, color="tab:orange")
    ax2.set_ylabel("||mu_E - mu||")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


BENCH_COLUMNS = ("rule_s", "feature_s", "check_s", "cex_s")


def bench_chart(rows: Sequence[dict], path) -> Path:
    """Per-iteration timings against the joint state count, log-log."""
    fig, ax = plt.subplots(figsize=(6, 4))
    states = [r["joint_states"] for r in rows]
    for col in BENCH_COLUMNS:
        ax.plot(states, [r[col] for r in rows], "o-", label=col)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("joint states")
    ax.set_ylabel("seconds per iteration")
    ax.legend(loc="best")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
