"""Relation vectors, pixel weighting maps and weighted map decoding.

Relation arrays use the pose layout ``(T, K, D)``. Entries that do not exist
(the root's bone, displacements reaching outside the sequence) are NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AnchorNotFiniteError,
    ShapeMismatchError,
    ZeroDurationError,
    ZeroTotalWeightError,
)
from .skeleton import JointTree, as_positions

DEFAULT_GRID = (64, 64)

BINARY = "binary"
GAUSSIAN = "gaussian"
LINEAR = "linear"
EXPONENTIAL = "exponential"
JOINT_ONE = "joint-one"
FULL = "full"
FAMILIES = (BINARY, GAUSSIAN, LINEAR, EXPONENTIAL, JOINT_ONE, FULL)


def compute_bone_vectors(tree: JointTree, pose) -> np.ndarray:
    """Bone vectors ``J_k - J_parent(k)`` for every frame; NaN rows at the root."""
    pos = as_positions(pose)
    if pos.shape[1] != tree.joint_count:
        raise ShapeMismatchError(f"pose has {pos.shape[1]} joints, tree has {tree.joint_count}")
    bones = np.full_like(pos, np.nan)
    for k in tree.non_root():
        bones[:, k] = pos[:, k] - pos[:, tree.parent(k)]
    return bones


def compute_displacements(pose, d: int) -> np.ndarray:
    """Displacements ``J^t - J^(t-d)``; frames whose partner falls outside the
    sequence are NaN."""
    if d == 0:
        raise ZeroDurationError("duration must be nonzero")
    pos = as_positions(pose)
    T = pos.shape[0]
    out = np.full_like(pos, np.nan)
    if abs(d) >= T:
        return out
    if d > 0:
        out[d:] = pos[d:] - pos[:-d]
    else:
        out[:d] = pos[:d] - pos[-d:]
    return out


def displacement_support(T: int, d: int) -> np.ndarray:
    """Boolean mask over frames ``t`` (0-based) for which ``t - d`` is in range."""
    t = np.arange(T)
    return (t - d >= 0) & (t - d < T)


@dataclass(frozen=True)
class GridTransform:
    """Affine map from grid pixel coordinates ``(col, row)`` to image-plane ``(x, y)``.

    ``x = origin[0] + scale[0] * col`` and likewise for ``y`` with ``row``.
    """

    origin: tuple[float, float] = (0.0, 0.0)
    scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.scale[0] == 0 or self.scale[1] == 0:
            raise ValueError("grid scale must be nonzero")

    def to_grid(self, point) -> tuple[float, float]:
        x, y = point
        return (x - self.origin[0]) / self.scale[0], (y - self.origin[1]) / self.scale[1]

    def to_image(self, col: float, row: float) -> tuple[float, float]:
        return self.origin[0] + self.scale[0] * col, self.origin[1] + self.scale[1] * row


@dataclass(frozen=True)
class RelationMap:
    """Per-pixel relation predictions for one joint, shape ``(H, W, D)``."""

    values: np.ndarray
    transform: GridTransform = GridTransform()

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[..., None]
        if vals.ndim != 3 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ShapeMismatchError(f"relation map must be (H, W, D), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("relation map entries must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


@dataclass(frozen=True)
class WeightSpec:
    family: str
    beta: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown decay family {self.family!r}; expected one of {FAMILIES}")
        beta = float(self.beta)
        if not math.isfinite(beta) or beta < 0:
            raise ValueError(f"beta must be finite and nonnegative, got {self.beta}")
        object.__setattr__(self, "beta", beta)


def build_distance_map(anchor, grid_shape=DEFAULT_GRID, transform: GridTransform | None = None) -> np.ndarray:
    """Distance in grid pixels from every pixel to ``anchor`` (an image-plane point).

    Returns an ``(H, W)`` array indexed ``[row, col]``.
    """
    H, W = grid_shape
    if H < 1 or W < 1:
        raise ShapeMismatchError(f"grid must be nonempty, got {grid_shape}")
    if len(anchor) != 2 or not all(math.isfinite(float(a)) for a in anchor):
        raise AnchorNotFiniteError(f"anchor must be a finite 2D point, got {anchor!r}")
    transform = transform or GridTransform()
    u, v = transform.to_grid((float(anchor[0]), float(anchor[1])))
    rows = np.arange(H, dtype=float)[:, None]
    cols = np.arange(W, dtype=float)[None, :]
    return np.hypot(cols - u, rows - v)


def build_weight_map(F: np.ndarray, spec: WeightSpec) -> np.ndarray:
    """Apply a decay family to a distance map. Values always land in [0, 1]."""
    F = np.asarray(F, dtype=float)
    beta = spec.beta
    if spec.family == BINARY:
        return (F <= beta).astype(float)
    if spec.family == GAUSSIAN:
        return np.exp(-beta * F**2)
    if spec.family == LINEAR:
        # Unclamped 1 - beta*F goes negative far from the anchor.
        return np.clip(1.0 - beta * F, 0.0, 1.0)
    if spec.family == EXPONENTIAL:
        return np.exp(-beta * F)
    if spec.family == JOINT_ONE:
        return (F == F.min()).astype(float)
    return np.ones_like(F)


def _map_values(M) -> np.ndarray:
    if isinstance(M, RelationMap):
        return M.values
    vals = np.asarray(M, dtype=float)
    return vals[..., None] if vals.ndim == 2 else vals


def weighted_inference(M, W) -> np.ndarray:
    """Weighted average of the per-pixel predictions in ``M`` under weights ``W``."""
    vals = _map_values(M)
    W = np.asarray(W, dtype=float)
    if vals.shape[:2] != W.shape:
        raise ShapeMismatchError(f"map grid {vals.shape[:2]} != weight grid {W.shape}")
    total = W.sum()
    if not total > 0:
        raise ZeroTotalWeightError("pixel weights sum to zero")
    # Averaging offsets from the heaviest pixel keeps constant maps and
    # single-pixel selections exact in floating point.
    ref = vals[np.unravel_index(np.argmax(W), W.shape)]
    return ref + np.einsum("hw,hwd->d", W, vals - ref) / total


def decode(M, anchor, spec: WeightSpec | Sequence[WeightSpec]) -> np.ndarray:
    """Decode one relation vector from ``M`` around a related-joint ``anchor``.

    A list of specs decodes with each one and averages the results, which is
    how an ensemble of decay functions is combined.
    """
    vals = _map_values(M)
    transform = M.transform if isinstance(M, RelationMap) else None
    F = build_distance_map(anchor, vals.shape[:2], transform)
    specs = [spec] if isinstance(spec, WeightSpec) else list(spec)
    if not specs:
        raise ValueError("at least one weight spec is required")
    outs = [weighted_inference(vals, build_weight_map(F, s)) for s in specs]
    return outs[0] if len(outs) == 1 else np.mean(outs, axis=0)


def relation_loss(M_pre, M_gt, W) -> float:
    """Weighted L1 training objective between predicted and true relation maps."""
    pre = _map_values(M_pre)
    gt = _map_values(M_gt)
    W = np.asarray(W, dtype=float)
    if pre.shape != gt.shape or pre.shape[:2] != W.shape:
        raise ShapeMismatchError(f"shapes differ: {pre.shape}, {gt.shape}, weights {W.shape}")
    per_pixel = W * np.abs(pre - gt).sum(axis=-1)
    return math.fsum(per_pixel.ravel())


def constant_map(vector, grid_shape=DEFAULT_GRID) -> np.ndarray:
    """A relation map whose every pixel predicts ``vector``."""
    v = np.asarray(vector, dtype=float)
    return np.broadcast_to(v, tuple(grid_shape) + v.shape).copy()
