"""Matplotlib figure rendering for the report path.

Figures are written next to the delimited outputs: precision/recall curves
per class at a chosen IoU threshold, a bar summary of the headline AP
numbers, and the layout construction stages as one panel row.  All rendering
uses the Agg backend and atomic replacement, so no display is required and
no partial file is ever left behind.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport
from .layout import LayoutGrid

__all__ = ["curve_csv", "save_ap_summary", "save_layout_panels", "save_pr_curves"]


def _atomic_savefig(fig: "plt.Figure", path: "str | Path") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, format=path.suffix.lstrip(".") or "png")
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    finally:
        plt.close(fig)


def save_pr_curves(report: EvalReport, path: "str | Path", iou_thresh: float = 0.5) -> None:
    """One precision/recall axes with a step curve per class."""
    curves = report.curves.get(iou_thresh)
    if curves is None:
        raise ValueError(f"report holds no curves at IoU {iou_thresh}")
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    for label, points in sorted(curves.items()):
        if points:
            recalls = [p.recall for p in points]
            precisions = [p.precision for p in points]
        else:
            recalls, precisions = [], []
        ax.step([0.0] + recalls, [1.0] + precisions, where="post", label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.set_title(f"Precision/recall at IoU {iou_thresh:.2f}")
    ax.legend(loc="lower left", fontsize="small")
    fig.tight_layout()
    _atomic_savefig(fig, path)


def save_ap_summary(report: EvalReport, path: "str | Path") -> None:
    names = ["AP50", "AP75", "AP", "AP_S", "AP_M", "AP_L"]
    values = [
        report.ap50,
        report.ap75,
        report.ap,
        report.ap_small,
        report.ap_medium,
        report.ap_large,
    ]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    bars = ax.bar(names, values, color="#4878a8")
    ax.bar_label(bars, fmt="%.3f", fontsize="small")
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("average precision")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _atomic_savefig(fig, path)


def save_layout_panels(
    obstacle: LayoutGrid,
    road: LayoutGrid,
    combined: LayoutGrid,
    path: "str | Path",
) -> None:
    """Obstacle heat map, road distribution and their combination side by side."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    for ax, grid, title in zip(
        axes, (obstacle, road, combined), ("obstacle distribution", "road distribution", "combined layout")
    ):
        im = ax.imshow(
            grid.values,
            cmap="inferno",
            vmin=0.0,
            vmax=1.0,
            extent=(0, 1, 1, 0),
            aspect="auto",
        )
        ax.set_title(title, fontsize="small")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes, fraction=0.02)
    _atomic_savefig(fig, path)


def curve_csv(report: EvalReport, iou_thresh: float, class_label: "str | None" = None) -> str:
    """Delimited PR curve: columns score, recall, precision."""
    curves = report.curves.get(iou_thresh)
    if curves is None:
        raise ValueError(f"report holds no curves at IoU {iou_thresh}")
    if class_label is None:
        if len(curves) != 1:
            raise ValueError(
                f"report covers classes {sorted(curves)}; pick one for the curve dump"
            )
        class_label = next(iter(curves))
    if class_label not in curves:
        raise ValueError(f"no curve for class {class_label!r} at IoU {iou_thresh}")
    lines = ["score,recall,precision"]
    for p in curves[class_label]:
        lines.append(f"{p.score!r},{p.recall!r},{p.precision!r}")
    return "\n".join(lines) + "\n"
