"""Batch figure rendering: SVG line/box plots written next to the CSV/JSON
outputs they visualize.  No interactive backends."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InputError

METRIC_COLUMNS = ("dice", "iou", "precision", "sensitivity", "specificity")


def metric_boxplot(groups: dict, metric: str, out_path) -> None:
    """One box per group for a single metric; ``groups`` maps group label ->
    list of metric values."""
    if not groups:
        raise InputError("no groups to plot")
    labels = list(groups)
    data = [groups[k] for k in labels]
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(labels), 3.6))
    ax.boxplot(data, tick_labels=labels, showmeans=False)
    ax.set_ylabel(metric)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def tac_plot(times, curves: dict, out_path, ylabel: str = "attenuation") -> None:
    """Line plot of one or more time curves."""
    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    for label, values in curves.items():
        ax.plot(times, values, label=str(label))
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def residual_plot(residuals, out_path) -> None:
    """Relative-residual history of an iterative solve (log scale)."""
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.semilogy(range(len(residuals)), residuals, marker=".")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative residual")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def image_panel(images: dict, out_path, cmap: str = "gray") -> None:
    """Side-by-side rendering of named 2D arrays (PNG)."""
    if not images:
        raise InputError("no images to plot")
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.8))
    if n == 1:
        axes = [axes]
    for ax, (title, img) in zip(axes, images.items()):
        ax.imshow(img, cmap=cmap)
        ax.set_title(str(title), fontsize=8)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def render_metric_report(rows: list, group_column: str, out_dir) -> list:
    """Render box plots for every metric column plus a summary CSV.

    ``rows`` are dicts as read from a metrics CSV.  Returns the written paths.
    """
    from . import tensorio
    from .segeval import summarize

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    groups_of = {}
    for row in rows:
        if group_column not in row:
            raise InputError(f"rows lack group column {group_column!r}")
        groups_of.setdefault(row[group_column], []).append(row)

    summary_rows = []
    for metric in METRIC_COLUMNS:
        if not all(metric in r for r in rows):
            continue
        groups = {
            g: [float(r[metric]) for r in rs] for g, rs in sorted(groups_of.items())
        }
        svg = out / f"{metric}_box.svg"
        metric_boxplot(groups, metric, svg)
        written.append(svg)
        for g, values in groups.items():
            s = summarize(values)
            summary_rows.append(
                (g, metric, f"{s['median']:.6f}", f"{s['variance']:.6f}")
            )
    csv_path = out / "summary.csv"
    tensorio.write_csv(
        csv_path, ["group", "metric", "median", "variance"], summary_rows
    )
    written.append(csv_path)
    return written
