"""Plot rendering over the emitted CSVs; headless-safe (Agg backend).

Every figure is derived purely from CSV files in the output directory, so
plots can be regenerated at any time and never hold data of their own.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .ppo import exponential_moving_average


def _matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def convergence_plot(out_dir: Path, smoothing: float = 0.9) -> Path | None:
    """Overlay smoothed reward curves (band = across-seed std) for every
    convergence_<users>u.csv found in the directory."""
    files = sorted(Path(out_dir).glob("convergence_*u.csv"))
    if not files:
        return None
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in files:
        match = re.search(r"convergence_(\d+)u", path.name)
        label = f"{match.group(1)} users" if match else path.stem
        header, rows = _read_csv(path)
        seed_cols = [i for i, h in enumerate(header)
                     if h.startswith("reward_seed")]
        data = np.asarray([[float(r[i]) for i in seed_cols] for r in rows])
        smoothed = np.column_stack([
            exponential_moving_average(data[:, j], smoothing)
            for j in range(data.shape[1])])
        epochs = np.asarray([int(r[0]) for r in rows])
        mean = smoothed.mean(axis=1)
        std = smoothed.std(axis=1)
        ax.plot(epochs, mean, label=label)
        ax.fill_between(epochs, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean episode reward (smoothed)")
    ax.legend()
    fig.tight_layout()
    target = Path(out_dir) / "convergence.png"
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return target


def comparison_bar(out_dir: Path) -> Path | None:
    """Mean episode reward per strategy with a std error bar."""
    path = Path(out_dir) / "comparison.csv"
    if not path.is_file():
        return None
    plt = _matplotlib()
    header, rows = _read_csv(path)
    names = [r[0] for r in rows]
    means = [float(r[1]) for r in rows]
    stds = [float(r[2]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, means, yerr=stds, capsize=4)
    ax.set_ylabel("mean episode reward")
    ax.axhline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    target = Path(out_dir) / "comparison.png"
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return target


def episode_trajectory(out_dir: Path) -> Path | None:
    """Per-episode reward, mean across seeds, band = across-seed std."""
    path = Path(out_dir) / "episodes.csv"
    if not path.is_file():
        return None
    plt = _matplotlib()
    header, rows = _read_csv(path)
    series: dict[str, dict[int, list[tuple[int, float]]]] = {}
    for strategy, seed, episode, reward in rows:
        series.setdefault(strategy, {}).setdefault(int(seed), []).append(
            (int(episode), float(reward)))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy, by_seed in series.items():
        per_seed = []
        for seed in sorted(by_seed):
            ordered = sorted(by_seed[seed])
            per_seed.append([r for _, r in ordered])
        data = np.asarray(per_seed)  # (seeds, episodes)
        episodes = np.arange(data.shape[1])
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        ax.plot(episodes, mean, label=strategy, linewidth=0.9)
        ax.fill_between(episodes, mean - std, mean + std, alpha=0.15)
    ax.set_xlabel("episode")
    ax.set_ylabel("episode reward (mean across seeds)")
    ax.legend()
    fig.tight_layout()
    target = Path(out_dir) / "episodes.png"
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return target
