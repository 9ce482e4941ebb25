"""Spatiotemporal least-squares pose tracking.

The tracked pose minimises, over all joints ``k`` and frames ``t``::

    |X - J|^2 + alpha |X_k - X_parent(k) - B|^2 + sum_n gamma_n |X^t - X^(t-d_n) - Delta^(t,d_n)|^2

Every term is linear in the unknowns and the weights do not depend on the
coordinate axis, so each axis is an independent sparse SPD solve sharing one
normal matrix.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    InvalidProblemError,
    NotPositiveDefiniteError,
    ProblemTooLargeError,
    ShapeMismatchError,
)
from .relations import displacement_support
from .skeleton import JointTree, as_positions

PRESETS: dict[str, tuple[int, ...]] = {
    "f": (1,),
    "fb": (1, -1),
    "mf": (1, 2, 3),
    "mfb": (1, 2, 3, -1, -2, -3),
}

DENSE_LIMIT = 10_000
RESIDUAL_RTOL = 1e-10
RESIDUAL_ATOL = 1e-12


def durations_for(preset: str) -> tuple[int, ...]:
    try:
        return PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown duration preset {preset!r}; expected one of {sorted(PRESETS)}") from None


def check_durations(durations: Sequence[int]) -> tuple[int, ...]:
    ds = tuple(int(d) for d in durations)
    if any(d == 0 for d in ds):
        raise InvalidProblemError("durations must be nonzero", "ZERO_DURATION")
    if len(set(ds)) != len(ds):
        raise InvalidProblemError(f"duplicate durations in {ds}", "DUPLICATE_DURATION")
    return ds


@dataclass(frozen=True)
class TrackingProblem:
    """Single-frame predictions plus relation predictions and term weights.

    ``bones`` and each ``displacements[d]`` have the pose shape ``(T, K, D)``
    with NaN where the relation does not exist (root bone, out-of-range
    partner frame). ``displacements`` may carry durations beyond
    ``durations``; only the listed ones enter the objective.
    """

    tree: JointTree
    single_frame: np.ndarray
    bones: np.ndarray
    displacements: Mapping[int, np.ndarray]
    durations: tuple[int, ...] = (1,)
    alpha: float = 1.0
    gamma: tuple[float, ...] | None = None
    data_weight: float = 1.0
    ground_truth: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        J = np.array(as_positions(self.single_frame), dtype=float)
        object.__setattr__(self, "single_frame", J)
        object.__setattr__(self, "bones", np.array(self.bones, dtype=float))
        object.__setattr__(
            self,
            "displacements",
            {int(d): np.array(v, dtype=float) for d, v in self.displacements.items()},
        )
        ds = check_durations(self.durations)
        object.__setattr__(self, "durations", ds)
        gamma = (1.0,) * len(ds) if self.gamma is None else tuple(float(g) for g in self.gamma)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "data_weight", float(self.data_weight))
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth", np.array(self.ground_truth, dtype=float))
        self.validate()

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.single_frame.shape

    def validate(self) -> None:
        J = self.single_frame
        if J.ndim != 3 or min(J.shape) < 1:
            raise InvalidProblemError(f"single-frame poses must be (T, K, D), got {J.shape}", "SHAPE_MISMATCH")
        T, K, D = J.shape
        if K != self.tree.joint_count:
            raise InvalidProblemError(f"poses have {K} joints, tree has {self.tree.joint_count}", "SHAPE_MISMATCH")
        if not np.all(np.isfinite(J)):
            raise InvalidProblemError("single-frame poses contain non-finite values", "NOT_FINITE")
        for name, w in [("alpha", self.alpha), ("data_weight", self.data_weight), *[("gamma", g) for g in self.gamma]]:
            if not math.isfinite(w) or w < 0:
                raise InvalidProblemError(f"{name} must be finite and nonnegative, got {w}", "BAD_WEIGHT")
        if len(self.gamma) != len(self.durations):
            raise InvalidProblemError(
                f"{len(self.gamma)} gamma values for {len(self.durations)} durations", "GAMMA_LENGTH"
            )
        if self.bones.shape != J.shape:
            raise InvalidProblemError(f"bones shape {self.bones.shape} != poses shape {J.shape}", "SHAPE_MISMATCH")
        root = self.tree.root
        body = np.delete(self.bones, root, axis=1)
        if not np.all(np.isfinite(body)):
            raise InvalidProblemError("every non-root joint needs a finite bone vector in every frame", "MISSING_BONE")
        for d in self.durations:
            if d not in self.displacements:
                raise InvalidProblemError(f"no displacement predictions for duration {d}", "MISSING_DURATION")
            disp = self.displacements[d]
            if disp.shape != J.shape:
                raise InvalidProblemError(
                    f"displacements for duration {d} have shape {disp.shape}, expected {J.shape}", "SHAPE_MISMATCH"
                )
            support = displacement_support(T, d)
            if not np.all(np.isfinite(disp[support])):
                raise InvalidProblemError(f"missing displacement entries for duration {d}", "MISSING_DISPLACEMENT")
            if np.any(np.isfinite(disp[~support])):
                raise InvalidProblemError(
                    f"duration {d} has displacement entries whose partner frame is out of range", "SUPPORT"
                )

    def with_settings(self, durations=None, alpha=None, gamma=None) -> "TrackingProblem":
        """Copy with a different duration set and/or weights."""
        ds = self.durations if durations is None else tuple(durations)
        if gamma is None:
            gamma = self.gamma if durations is None else (1.0,) * len(ds)
        return TrackingProblem(
            tree=self.tree,
            single_frame=self.single_frame,
            bones=self.bones,
            displacements=self.displacements,
            durations=ds,
            alpha=self.alpha if alpha is None else alpha,
            gamma=tuple(gamma),
            data_weight=self.data_weight,
            ground_truth=self.ground_truth,
        )


@dataclass
class TrackedResult:
    solution: np.ndarray
    objective: float
    residual_norm: float
    iterations: int
    wall_time: float = 0.0


def objective_value(problem: TrackingProblem, candidate) -> float:
    """Tracking objective evaluated at ``candidate`` (shape ``(T, K, D)``)."""
    X = as_positions(candidate)
    if X.shape != problem.shape:
        raise ShapeMismatchError(f"candidate shape {X.shape} != problem shape {problem.shape}")
    T = X.shape[0]
    terms = [problem.data_weight * (X - problem.single_frame) ** 2]
    if problem.alpha:
        ks = problem.tree.non_root()
        parents = [problem.tree.parent(k) for k in ks]
        r = X[:, ks] - X[:, parents] - problem.bones[:, ks]
        terms.append(problem.alpha * r**2)
    for d, g in zip(problem.durations, problem.gamma):
        if not g:
            continue
        ts = np.nonzero(displacement_support(T, d))[0]
        r = X[ts] - X[ts - d] - problem.displacements[d][ts]
        terms.append(g * r**2)
    # fsum keeps finite-difference checks on the objective meaningful.
    return math.fsum(np.concatenate([t.ravel() for t in terms]))


def _index(K: int):
    return lambda t, k: t * K + k


def constraint_system(problem: TrackingProblem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Weighted constraint matrix ``C`` and right-hand sides ``r`` (one column
    per axis) so that the objective equals ``|C x - r|^2`` per axis.

    Rows: one per data term, one per non-root bone, one per in-range
    displacement, i.e. at most ``(N + 2) K T``.
    """
    T, K, D = problem.shape
    n = K * T
    rows_i, cols, vals, rhs = [], [], [], []
    row = 0

    sw = math.sqrt(problem.data_weight)
    idx = np.arange(n)
    rows_i.append(idx)
    cols.append(idx)
    vals.append(np.full(n, sw))
    rhs.append(sw * problem.single_frame.reshape(n, D))
    row = n

    def add_pairs(a: np.ndarray, b: np.ndarray, target: np.ndarray, weight: float):
        nonlocal row
        m = len(a)
        if m == 0 or weight == 0:
            return
        s = math.sqrt(weight)
        r = np.arange(row, row + m)
        rows_i.extend([r, r])
        cols.extend([a, b])
        vals.extend([np.full(m, s), np.full(m, -s)])
        rhs.append(s * target)
        row += m

    ks = np.array(problem.tree.non_root(), dtype=int)
    if len(ks):
        parents = np.array([problem.tree.parent(k) for k in ks], dtype=int)
        tt = np.repeat(np.arange(T), len(ks))
        kk = np.tile(ks, T)
        pp = np.tile(parents, T)
        add_pairs(tt * K + kk, tt * K + pp, problem.bones[tt, kk], problem.alpha)

    for d, g in zip(problem.durations, problem.gamma):
        ts = np.nonzero(displacement_support(T, d))[0]
        tt = np.repeat(ts, K)
        kk = np.tile(np.arange(K), len(ts))
        add_pairs(tt * K + kk, (tt - d) * K + kk, problem.displacements[d][tt, kk], g)

    C = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols))), shape=(row, n)
    )
    return C, np.vstack(rhs)


def assemble_system(problem: TrackingProblem) -> tuple[sp.csc_matrix, np.ndarray]:
    """Normal matrix ``A`` (shared by all axes) and right-hand sides ``b`` of
    shape ``(K*T, D)``.

    Unknowns are ordered frame-major: index ``t*K + k``. Minimising
    ``x^T A x / 2 - b^T x`` per axis is equivalent to minimising the objective.
    """
    C, r = constraint_system(problem)
    A = (C.T @ C).tocsc()
    A.sum_duplicates()
    A.eliminate_zeros()
    b = np.asarray(C.T @ r)
    return A, b


def _residual_ok(res: np.ndarray, b: np.ndarray) -> bool:
    rn = np.linalg.norm(res, axis=0)
    bn = np.linalg.norm(b, axis=0)
    limit = np.where(bn > 0, RESIDUAL_RTOL * bn, RESIDUAL_ATOL)
    return bool(np.all(rn <= limit))


def _relative_residual(res: np.ndarray, b: np.ndarray) -> float:
    rn = np.linalg.norm(res, axis=0)
    bn = np.linalg.norm(b, axis=0)
    return float(np.max(np.where(bn > 0, rn / np.where(bn > 0, bn, 1.0), rn)))


def solve_tracking(problem: TrackingProblem, max_refinements: int = 5) -> TrackedResult:
    """Minimise the tracking objective with a sparse LU factorisation of the
    normal matrix, followed by iterative refinement until the residual
    contract holds."""
    start = time.perf_counter()
    if not problem.data_weight > 0:
        raise NotPositiveDefiniteError(
            "without the single-frame term the system has a translation null space"
        )
    T, K, D = problem.shape
    A, b = assemble_system(problem)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise NotPositiveDefiniteError(f"factorisation failed: {exc}") from exc
    x = lu.solve(b)
    res = b - A @ x
    iterations = 1
    while not _residual_ok(res, b) and iterations <= max_refinements:
        x += lu.solve(res)
        res = b - A @ x
        iterations += 1
    if not np.all(np.isfinite(x)):
        raise NotPositiveDefiniteError("solver produced non-finite values")
    solution = x.reshape(T, K, D)
    return TrackedResult(
        solution=solution,
        objective=objective_value(problem, solution),
        residual_norm=_relative_residual(res, b),
        iterations=iterations,
        wall_time=time.perf_counter() - start,
    )


def dense_oracle_solve(problem: TrackingProblem) -> TrackedResult:
    """Reference solver: expands the objective term by term into a dense
    normal matrix and factorises it with Cholesky.

    Deliberately shares no assembly code with :func:`solve_tracking`.
    """
    start = time.perf_counter()
    T, K, D = problem.shape
    n = K * T
    if n > DENSE_LIMIT:
        raise ProblemTooLargeError(f"K*T = {n} exceeds the dense limit {DENSE_LIMIT}")
    at = _index(K)
    A = np.zeros((n, n))
    b = np.zeros((n, D))
    J = problem.single_frame

    def pair(i: int, j: int, w: float, target: np.ndarray):
        # w * |x_i - x_j - target|^2
        A[i, i] += w
        A[j, j] += w
        A[i, j] -= w
        A[j, i] -= w
        b[i] += w * target
        b[j] -= w * target

    for t in range(T):
        for k in range(K):
            i = at(t, k)
            A[i, i] += problem.data_weight
            b[i] += problem.data_weight * J[t, k]
            p = problem.tree.parent(k)
            if p is not None and problem.alpha:
                pair(i, at(t, p), problem.alpha, problem.bones[t, k])
            for d, g in zip(problem.durations, problem.gamma):
                if g and 0 <= t - d < T:
                    pair(i, at(t - d, k), g, problem.displacements[d][t, k])
    try:
        factor = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"dense normal matrix is not positive definite: {exc}") from exc
    x = scipy.linalg.cho_solve(factor, b)
    solution = x.reshape(T, K, D)
    return TrackedResult(
        solution=solution,
        objective=objective_value(problem, solution),
        residual_norm=_relative_residual(b - A @ x, b),
        iterations=1,
        wall_time=time.perf_counter() - start,
    )
