"""Evaluation metrics: joint, bone and displacement errors, PCF curves and
displacement difficulty bins. All distances are in millimetres."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError, SupportMismatchError, ZeroDurationError
from .relations import compute_displacements, displacement_support
from .skeleton import as_positions

EASY_LIMIT = 30.0
HARD_LIMIT = 60.0
AXES = "xyz"


@dataclass
class MetricReport:
    joint_error_mm: float
    per_joint: list[float]
    per_dimension: list[float]
    bone_error_mm: float | None = None
    displ_error_mm: float | None = None
    pcf_curve: list[tuple[float, float]] = field(default_factory=list)
    joint_names: list[str] | None = None

    def rows(self) -> list[tuple[str, float]]:
        """``(label, error_mm)`` rows: one per joint, then x/y/(z), then mean."""
        names = self.joint_names or [str(k) for k in range(len(self.per_joint))]
        out = list(zip(names, self.per_joint))
        out += [(AXES[i], v) for i, v in enumerate(self.per_dimension)]
        out.append(("mean", self.joint_error_mm))
        if self.bone_error_mm is not None:
            out.append(("bone", self.bone_error_mm))
        if self.displ_error_mm is not None:
            out.append(("displ", self.displ_error_mm))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["joint_name_or_index", "error_mm"])
        for label, value in self.rows():
            w.writerow([label, repr(float(value))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pcf_curve"] = [[float(a), float(b)] for a, b in self.pcf_curve]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def joint_error(pred, gt, joint_names=None) -> MetricReport:
    """Mean per-joint position error (MPJPE) with per-joint and per-axis breakdowns.

    Per-axis values are mean absolute coordinate errors.
    """
    P, G = as_positions(pred), as_positions(gt)
    _check_same_shape(P, G)
    diff = P - G
    dist = np.linalg.norm(diff, axis=-1)
    return MetricReport(
        joint_error_mm=float(dist.mean()),
        per_joint=[float(v) for v in dist.mean(axis=0)],
        per_dimension=[float(v) for v in np.abs(diff).mean(axis=(0, 1))],
        joint_names=list(joint_names) if joint_names is not None else None,
    )


def _supported_mean_norm(a: np.ndarray, b: np.ndarray) -> float:
    _check_same_shape(a, b)
    ma, mb = np.isfinite(a).all(axis=-1), np.isfinite(b).all(axis=-1)
    if not np.array_equal(ma, mb):
        raise SupportMismatchError("prediction and ground truth cover different (t, k) entries")
    if not ma.any():
        raise SupportMismatchError("no entries to compare")
    return float(np.linalg.norm(a[ma] - b[mb], axis=-1).mean())


def bone_error(pred_bones, gt_bones) -> float:
    """Mean norm of bone-vector differences over the entries both sides define."""
    return _supported_mean_norm(np.asarray(pred_bones, float), np.asarray(gt_bones, float))


def displ_error(pred_displacements, gt_pose, d: int) -> float:
    """Joint error of ``J_gt^(t-d) + predicted displacement`` against ``J_gt^t``.

    Isolates displacement quality from single-frame quality.
    """
    if d == 0:
        raise ZeroDurationError("duration must be nonzero")
    G = as_positions(gt_pose)
    disp = np.asarray(pred_displacements, dtype=float)
    _check_same_shape(disp, G)
    support = displacement_support(G.shape[0], d)
    defined = np.isfinite(disp).all(axis=-1)
    expected = np.broadcast_to(support[:, None], defined.shape)
    if not np.array_equal(defined, expected):
        raise SupportMismatchError(f"displacements for duration {d} do not cover exactly the in-range frames")
    ts = np.nonzero(support)[0]
    if len(ts) == 0:
        raise SupportMismatchError(f"sequence too short for duration {d}")
    # (J^(t-d) + pred) - J^t, grouped so a perfect prediction scores exactly 0
    err = disp[ts] - (G[ts] - G[ts - d])
    return float(np.linalg.norm(err, axis=-1).mean())


def frame_max_errors(pred, gt) -> np.ndarray:
    P, G = as_positions(pred), as_positions(gt)
    _check_same_shape(P, G)
    return np.linalg.norm(P - G, axis=-1).max(axis=1)


def pcf(pred, gt, thresholds: Sequence[float]) -> list[tuple[float, float]]:
    """Percentage of correct frames: fraction of frames whose worst joint error
    is strictly below each threshold."""
    th = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(th) < 0):
        raise ValueError("thresholds must be sorted ascending")
    worst = frame_max_errors(pred, gt)
    return [(float(tau), float(np.mean(worst < tau))) for tau in th]


@dataclass
class DisplacementBins:
    counts: dict[str, int]
    fractions: dict[str, float]
    mean_magnitude: dict[str, float | None]
    mean_error: dict[str, float | None] | None = None


BIN_NAMES = ("easy", "middle", "hard")


def bin_label(magnitude: float) -> str:
    """Easy below 30 mm, Middle on [30, 60] mm, Hard above 60 mm."""
    if magnitude < EASY_LIMIT:
        return "easy"
    if magnitude <= HARD_LIMIT:
        return "middle"
    return "hard"


def displacement_bins(magnitudes, errors=None) -> DisplacementBins:
    """Partition ground-truth displacement magnitudes into difficulty bins.

    When per-sample ``errors`` are given, their mean per bin is reported too.
    """
    mags = np.asarray(magnitudes, dtype=float).ravel()
    if np.any(mags < 0) or not np.all(np.isfinite(mags)):
        raise ValueError("magnitudes must be finite and nonnegative")
    masks = {
        "easy": mags < EASY_LIMIT,
        "middle": (mags >= EASY_LIMIT) & (mags <= HARD_LIMIT),
        "hard": mags > HARD_LIMIT,
    }
    n = len(mags)
    errs = None if errors is None else np.asarray(errors, dtype=float).ravel()
    if errs is not None and errs.shape != mags.shape:
        raise ShapeMismatchError("errors must match magnitudes")

    def mean_or_none(values, mask):
        return float(values[mask].mean()) if mask.any() else None

    return DisplacementBins(
        counts={b: int(m.sum()) for b, m in masks.items()},
        fractions={b: (float(m.sum()) / n if n else 0.0) for b, m in masks.items()},
        mean_magnitude={b: mean_or_none(mags, m) for b, m in masks.items()},
        mean_error=None if errs is None else {b: mean_or_none(errs, m) for b, m in masks.items()},
    )


def displacement_magnitudes(gt_pose, d: int = 1) -> np.ndarray:
    """Norms of the ground-truth displacements over in-range frames, shape ``(T', K)``."""
    disp = compute_displacements(gt_pose, d)
    support = displacement_support(disp.shape[0], d)
    return np.linalg.norm(disp[support], axis=-1)
