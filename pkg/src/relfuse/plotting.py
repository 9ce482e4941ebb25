"""Report figures. Each function writes one image file and closes its figure."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricReport  # noqa: E402

_STYLE = {
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_pcf(curves: dict[str, Sequence[tuple[float, float]]], path, title="Percentage of correct frames"):
    """One line per labelled PCF curve."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, curve in curves.items():
            th, frac = zip(*curve) if curve else ((), ())
            ax.plot(th, 100.0 * np.asarray(frac), label=label)
        ax.set_xlabel("max joint error threshold (mm)")
        ax.set_ylabel("frames within threshold (%)")
        ax.set_ylim(0, 100)
        ax.set_title(title)
        if len(curves) > 1:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_per_joint(report: MetricReport, path):
    with plt.rc_context(_STYLE):
        names = report.joint_names or [str(k) for k in range(len(report.per_joint))]
        fig, ax = plt.subplots(figsize=(max(4, 0.4 * len(names) + 1), 3.5))
        ax.bar(range(len(names)), report.per_joint, color="tab:blue")
        ax.axhline(report.joint_error_mm, color="k", lw=1, ls="--", label=f"mean {report.joint_error_mm:.2f} mm")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=60 if len(names) > 8 else 0)
        ax.set_ylabel("joint error (mm)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_preset_errors(summary: dict[str, tuple[float, float]], path):
    """Bar chart of mean joint error per method with standard-error bars.

    ``summary`` maps a label (``single-frame``, ``f``, ...) to ``(mean, sem)``.
    """
    with plt.rc_context(_STYLE):
        labels = list(summary)
        means = [summary[k][0] for k in labels]
        sems = [summary[k][1] for k in labels]
        fig, ax = plt.subplots(figsize=(1.1 * len(labels) + 2, 3.5))
        ax.bar(labels, means, yerr=sems, capsize=3, color="tab:gray")
        ax.set_ylabel("mean joint error (mm)")
        return _save(fig, path)
