"""Static SVG plots for evaluation results."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .kitti import CLASS_NAMES

_CLASS_COLORS = {"Car": "tab:red", "Pedestrian": "tab:green", "Cyclist": "tab:cyan",
                 "mean": "black"}


def save_pr_curves(result, path) -> None:
    """Precision-recall curves, one line per class with its AP in the legend."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for c, points in sorted(result.pr_points.items()):
        name = CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c)
        ap = result.per_class_ap.get(c)
        label = f"{name} (AP {ap:.3f})" if ap is not None else f"{name} (no data)"
        if points:
            recall, precision = zip(*points)
            ax.plot(recall, precision, label=label, color=_CLASS_COLORS.get(name))
        else:
            ax.plot([], [], label=label, color=_CLASS_COLORS.get(name))
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower left", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)


def save_layer_curves(rows: list[dict], path) -> None:
    """AP against the number of kept layers, one line per class plus the mean."""
    by_name: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        if row["ap"] is None:
            continue
        by_name.setdefault(row["class_name"], []).append((row["layer_count"], row["ap"]))
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, points in by_name.items():
        points.sort()
        xs, ys = zip(*points)
        style = "--" if name == "mean" else "-"
        ax.plot(xs, ys, style, marker="o", label=name, color=_CLASS_COLORS.get(name))
    ax.set_xlabel("layers kept")
    ax.set_ylabel("AP")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)
