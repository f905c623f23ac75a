"""Headless matplotlib renderings for evaluation, training and match output."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ..world import Scene, Terrain
from .match import EvalRow, MatchReport

_LABEL_ORDER = ("easy", "medium", "hard")


def save_eval_figure(rows: Mapping[str, EvalRow], path: str | Path) -> Path:
    """Find-rate bars per difficulty with Wilson interval whiskers."""
    labels = [label for label in _LABEL_ORDER if label in rows]
    labels += [label for label in rows if label not in labels]
    rates = [rows[label].find_rate for label in labels]
    err_low = [rows[label].find_rate - rows[label].wilson_low for label in labels]
    err_high = [rows[label].wilson_high - rows[label].find_rate for label in labels]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.arange(len(labels))
    ax.bar(x, rates, width=0.6, color="tab:blue")
    ax.errorbar(x, rates, yerr=[err_low, err_high], fmt="none", ecolor="black", capsize=4)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("find rate")
    ax.set_title("Seeker find rate by spot difficulty (95% CI)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_training_figure(log: Sequence[Mapping], path: str | Path) -> Path:
    """Exploration coverage per training episode with a rolling mean."""
    episodes = [record["episode"] for record in log]
    coverage = [record["coverage"] for record in log]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(episodes, coverage, ".", markersize=3, alpha=0.35, color="tab:blue", label="episode")
    if len(coverage) >= 2:
        window = max(2, len(coverage) // 20)
        kernel = np.ones(window) / window
        smoothed = np.convolve(coverage, kernel, mode="valid")
        ax.plot(episodes[window - 1:], smoothed, color="tab:red", label=f"mean of {window}")
    ax.set_xlabel("episode")
    ax.set_ylabel("coverage")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="upper left")
    ax.set_title("Exploration coverage during training")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


_TERRAIN_SHADE = {
    Terrain.FLOOR: 1.0,
    Terrain.WALL: 0.0,
    Terrain.FURNITURE_LOW: 0.75,
    Terrain.FURNITURE_HIGH: 0.5,
}


def save_match_figure(scene: Scene, report: MatchReport, path: str | Path) -> Path:
    """Top-down map with both agents' paths and the hiding spot."""
    shade = np.ones((scene.height, scene.width))
    for z in range(scene.height):
        for x in range(scene.width):
            shade[z, x] = _TERRAIN_SHADE[scene.terrain_at((x, z))]
    fig, ax = plt.subplots(figsize=(6, 6 * scene.height / scene.width))
    ax.imshow(shade, cmap="gray", vmin=0.0, vmax=1.0, origin="upper")
    for obj in scene.objects:
        marker = "s" if obj.openable else "^"
        ax.plot(*obj.cell, marker, color="tab:brown", markersize=9)
    hider = [(report.em_start[0], report.em_start[1])]
    hider += [(x, z) for x, z, _, _ in report.em_poses]
    ax.plot([c[0] for c in hider], [c[1] for c in hider],
            color="tab:blue", alpha=0.7, linewidth=2, label="hider")
    seeker = [(report.s_start[0], report.s_start[1])]
    seeker += [(x, z) for x, z, _, _ in report.s_poses]
    ax.plot([c[0] for c in seeker], [c[1] for c in seeker],
            color="tab:red", alpha=0.7, linewidth=2, label="seeker")
    ax.plot(*scene.start_pose.cell, "*", color="tab:green", markersize=14, label="start")
    ax.plot(*report.hidden_cell, "X", color="tab:purple", markersize=12, label="hidden")
    ax.set_xticks([])
    ax.set_yticks([])
    found = "found" if report.found else "not found"
    ax.set_title(f"{report.scene_id}: {report.goal_type} {found} in {report.seeker_steps} steps")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
