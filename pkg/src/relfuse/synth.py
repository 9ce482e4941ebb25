"""Deterministic synthetic skeleton motion and prediction noise.

Motion is generated in joint-angle space (sums of seeded sinusoids on each
joint's local rotation) so bone lengths stay fixed. Frame-rate tags set the
time step between frames; lower rates give larger per-frame displacements.

Random streams are derived from ``(seed, stream, index...)`` tuples, so any
joint or noise block can be generated independently of the others.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .relations import compute_bone_vectors, compute_displacements
from .skeleton import JointTree, as_positions
from .tracker import TrackingProblem, check_durations

FRAME_RATES = (25.0, 8.0, 2.5)

_MOTION, _ROOT, _SINGLE, _BONE, _DISPL, _RANDOM = range(6)


def _rng(seed: int, *path: int) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng([int(seed), *(int(p) for p in path)])


def _duration_key(d: int) -> tuple[int, int]:
    return abs(d), 0 if d > 0 else 1


@dataclass(frozen=True)
class MotionSpec:
    tree: JointTree
    frames: int
    fps: float = 8.0
    bone_lengths: tuple[float, ...] | None = None
    dims: int = 3
    amplitude: tuple[float, float] = (0.1, 0.4)  # radians
    frequency: tuple[float, float] = (0.1, 0.5)  # Hz
    root_amplitude: float = 100.0  # mm
    seed: int = 0

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("need at least two frames")
        if float(self.fps) not in FRAME_RATES:
            raise ValueError(f"fps must be one of {FRAME_RATES}, got {self.fps}")
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        lengths = self.lengths()
        if any(lengths[k] <= 0 for k in self.tree.non_root()):
            raise ValueError("bone lengths must be positive")
        lo, hi = self.amplitude
        if lo < 0 or hi < lo:
            raise ValueError(f"bad amplitude range {self.amplitude}")
        lo, hi = self.frequency
        if lo < 0 or hi < lo:
            raise ValueError(f"bad frequency range {self.frequency}")
        if self.root_amplitude < 0:
            raise ValueError("root amplitude must be nonnegative")

    def lengths(self) -> np.ndarray:
        K = self.tree.joint_count
        if self.bone_lengths is None:
            return np.full(K, 250.0)
        lengths = np.asarray(self.bone_lengths, dtype=float)
        if lengths.shape != (K,):
            raise ValueError(f"need {K} bone lengths (root entry ignored), got {lengths.shape}")
        return lengths


@dataclass(frozen=True)
class NoiseSpec:
    sigma_single: float = 20.0
    sigma_bone: float = 5.0
    sigma_displ: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_single", "sigma_bone", "sigma_displ"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")


def _sinusoids(rng: np.random.Generator, times: np.ndarray, n: int, amp, freq) -> np.ndarray:
    """``n`` independent sinusoid tracks over ``times``, shape ``(T, n)``."""
    a = rng.uniform(amp[0], amp[1], size=n)
    f = rng.uniform(freq[0], freq[1], size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    return a * np.sin(2 * np.pi * f * times[:, None] + phase)


def _random_direction(rng: np.random.Generator, dims: int) -> np.ndarray:
    v = rng.normal(size=dims)
    return v / np.linalg.norm(v)


def generate_sequence(spec: MotionSpec) -> np.ndarray:
    """Ground-truth positions ``(T, K, D)`` in millimetres."""
    tree, T, D = spec.tree, spec.frames, spec.dims
    K = tree.joint_count
    times = np.arange(T) / float(spec.fps)
    lengths = spec.lengths()
    pos = np.zeros((T, K, D))

    root_rng = _rng(spec.seed, _ROOT)
    offset = root_rng.uniform(-500.0, 500.0, size=D)
    amp = (spec.root_amplitude, spec.root_amplitude)
    pos[:, tree.root] = offset + _sinusoids(root_rng, times, D, amp, spec.frequency)

    if D == 3:
        orient = {tree.root: Rotation.identity(T)}
    else:
        orient = {tree.root: np.zeros(T)}
    for k in tree.topological_order():
        p = tree.parent(k)
        if p is None:
            continue
        rng = _rng(spec.seed, _MOTION, k)
        rest = _random_direction(rng, D) * lengths[k]
        if D == 3:
            swing = _sinusoids(rng, times, 3, spec.amplitude, spec.frequency)
            orient[k] = orient[p] * Rotation.from_rotvec(swing)
            bone = orient[k].apply(rest)
        else:
            swing = _sinusoids(rng, times, 1, spec.amplitude, spec.frequency)[:, 0]
            orient[k] = orient[p] + swing
            c, s = np.cos(orient[k]), np.sin(orient[k])
            bone = np.stack([c * rest[0] - s * rest[1], s * rest[0] + c * rest[1]], axis=-1)
        pos[:, k] = pos[:, p] + bone
    return pos


def corrupt_predictions(
    tree: JointTree,
    gt,
    durations: Sequence[int],
    noise: NoiseSpec,
    alpha: float = 1.0,
    gamma: Sequence[float] | None = None,
) -> TrackingProblem:
    """Simulate predictor output from ground truth with iid Gaussian errors.

    Returns a :class:`TrackingProblem` with the ground truth attached.
    """
    G = as_positions(gt)
    ds = check_durations(durations)
    J = G + _rng(noise.seed, _SINGLE).normal(0.0, noise.sigma_single, size=G.shape)
    true_bones = compute_bone_vectors(tree, G)
    bones = true_bones + _rng(noise.seed, _BONE).normal(0.0, noise.sigma_bone, size=G.shape)
    displacements = {}
    for d in ds:
        true_disp = compute_displacements(G, d)
        eps = _rng(noise.seed, _DISPL, *_duration_key(d)).normal(0.0, noise.sigma_displ, size=G.shape)
        displacements[d] = true_disp + eps
    return TrackingProblem(
        tree=tree,
        single_frame=J,
        bones=bones,
        displacements=displacements,
        durations=ds,
        alpha=alpha,
        gamma=tuple(gamma) if gamma is not None else None,
        ground_truth=G,
    )


def random_tree(rng: np.random.Generator, K: int) -> JointTree:
    """Random tree on ``K`` joints with a shuffled joint numbering."""
    perm = rng.permutation(K)
    parents: list[int | None] = [None] * K
    for i in range(1, K):
        parents[perm[i]] = int(perm[rng.integers(0, i)])
    return JointTree(tuple(parents))


def random_problem(
    seed: int,
    K: int,
    T: int,
    durations: Sequence[int],
    alpha: float = 1.0,
    gamma: Sequence[float] | float = 1.0,
    dims: int = 3,
    scale: float = 500.0,
) -> TrackingProblem:
    """Unstructured random problem: random tree, poses and relation predictions
    with no consistency between them."""
    rng = _rng(seed, _RANDOM)
    tree = random_tree(rng, K)
    ds = check_durations(durations)
    shape = (T, K, dims)
    J = rng.uniform(-scale, scale, size=shape)
    bones = rng.normal(0.0, scale / 2, size=shape)
    bones[:, tree.root] = np.nan
    displacements = {}
    for d in ds:
        disp = rng.normal(0.0, scale / 5, size=shape)
        t = np.arange(T)
        disp[~((t - d >= 0) & (t - d < T))] = np.nan
        displacements[d] = disp
    if np.isscalar(gamma):
        gamma = (float(gamma),) * len(ds)
    return TrackingProblem(
        tree=tree,
        single_frame=J,
        bones=bones,
        displacements=displacements,
        durations=ds,
        alpha=alpha,
        gamma=tuple(gamma),
    )


def mean_step_displacement(pose) -> float:
    """Mean per-frame joint displacement magnitude (duration 1)."""
    disp = compute_displacements(pose, 1)[1:]
    return float(np.linalg.norm(disp, axis=-1).mean())
