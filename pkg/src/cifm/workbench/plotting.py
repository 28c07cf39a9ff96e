"""Figures written next to the CSV/JSON reports (Agg backend, PNG files)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def training_curves(rows: list[dict], path: Path) -> Path:
    by_seed = defaultdict(list)
    for r in rows:
        by_seed[r["seed"]].append(r)
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9, 3.5))
    for seed, rs in sorted(by_seed.items()):
        epochs = [r["epoch"] for r in rs]
        ax_loss.plot(epochs, [r.get("grand_total", float("nan")) for r in rs], label=f"seed {seed}")
        ax_val.plot(epochs, [r["val_score"] for r in rs], label=f"seed {seed}")
    ax_loss.set(xlabel="epoch", ylabel="training loss")
    ax_val.set(xlabel="epoch", ylabel="validation score")
    ax_val.legend(fontsize=7)
    return _save(fig, path)


def robustness_curves(curves: dict[str, dict], path: Path) -> Path:
    """``curves`` maps a label to a ``RobustnessCurve.to_dict()`` payload."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, c in curves.items():
        ax.plot(c["strengths"], c["scores"], marker="o", label=label)
    ax.set(xlabel="perturbation strength", ylabel="robust score")
    ax.legend(fontsize=8)
    return _save(fig, path)


def transfer_bars(scores: dict[str, float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(scores) + 2), 3.5))
    names = list(scores)
    ax.bar(range(len(names)), [scores[n] for n in names])
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set(ylabel="probe score")
    return _save(fig, path)


def uniformity_vs_ari(points: dict[str, tuple[float, float]], path: Path) -> Path:
    """``points`` maps a label to (uniformity, ari)."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for label, (u, a) in points.items():
        ax.scatter([u], [a])
        ax.annotate(label, (u, a), fontsize=8, xytext=(3, 3), textcoords="offset points")
    ax.set(xlabel="uniformity (lower is more uniform)", ylabel="ARI")
    return _save(fig, path)
