"""Joint trees, pose storage and the relation-index function."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import RootHasNoParentError, ShapeMismatchError, TreeError, ZeroDurationError

SPATIAL = "spatial"
TEMPORAL = "temporal"


@dataclass(frozen=True)
class RelationKind:
    """Either a spatial (bone) relation or a temporal one over ``duration`` frames."""

    kind: str
    duration: int | None = None

    def __post_init__(self):
        if self.kind == SPATIAL:
            if self.duration is not None:
                raise ValueError("spatial relations take no duration")
        elif self.kind == TEMPORAL:
            if self.duration is None or int(self.duration) != self.duration:
                raise ValueError("temporal relations need an integer duration")
            if self.duration == 0:
                raise ZeroDurationError("temporal duration must be nonzero")
        else:
            raise ValueError(f"unknown relation kind {self.kind!r}")

    @classmethod
    def spatial(cls) -> "RelationKind":
        return cls(SPATIAL)

    @classmethod
    def temporal(cls, d: int) -> "RelationKind":
        return cls(TEMPORAL, int(d))

    @property
    def is_spatial(self) -> bool:
        return self.kind == SPATIAL

    def label(self) -> str:
        return SPATIAL if self.is_spatial else f"{TEMPORAL}:{self.duration}"


@dataclass(frozen=True)
class JointTree:
    """Joint hierarchy given by a parent index per joint (``None`` for the root).

    Construction validates the tree; see :func:`validate_tree`.
    """

    parents: tuple[int | None, ...]
    names: tuple[str, ...] | None = None
    _children: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        parents = tuple(None if p is None else int(p) for p in self.parents)
        object.__setattr__(self, "parents", parents)
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != len(parents):
                raise TreeError("names must have one entry per joint", "NAME_COUNT")
            object.__setattr__(self, "names", names)
        order = _topological_order(parents)
        children = [[] for _ in parents]
        for k, p in enumerate(parents):
            if p is not None:
                children[p].append(k)
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "_order", order)

    @classmethod
    def from_parent_list(cls, parents: Sequence[int], names=None) -> "JointTree":
        """Build from the flat file encoding where ``-1`` marks the root."""
        return cls(tuple(None if int(p) == -1 else int(p) for p in parents), names)

    @classmethod
    def chain(cls, n: int) -> "JointTree":
        return cls((None,) + tuple(range(n - 1)))

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> int:
        return self._order[0]

    def parent(self, k: int) -> int | None:
        return self.parents[k]

    def children(self, k: int) -> tuple[int, ...]:
        return self._children[k]

    def non_root(self) -> list[int]:
        return [k for k, p in enumerate(self.parents) if p is not None]

    def topological_order(self) -> tuple[int, ...]:
        """Joints ordered so that every parent precedes its children."""
        return self._order

    def parent_list(self) -> list[int]:
        return [-1 if p is None else p for p in self.parents]

    def joint_name(self, k: int) -> str:
        return self.names[k] if self.names is not None else str(k)


def _topological_order(parents: tuple[int | None, ...]) -> tuple[int, ...]:
    n = len(parents)
    if n == 0:
        raise TreeError("a joint tree needs at least one joint", "EMPTY_TREE")
    for k, p in enumerate(parents):
        if p is not None and not 0 <= p < n:
            raise TreeError(f"joint {k} has parent {p} outside [0, {n})", "DANGLING_PARENT")
    roots = [k for k, p in enumerate(parents) if p is None]
    # Cycles are checked before root count so a 2-cycle reports as a cycle.
    for start in range(n):
        seen = set()
        k = start
        while k is not None:
            if k in seen:
                raise TreeError(f"cycle through joint {k}", "CYCLE_DETECTED")
            seen.add(k)
            k = parents[k]
    if len(roots) > 1:
        raise TreeError(f"multiple roots: {roots}", "MULTIPLE_ROOTS")
    if not roots:
        raise TreeError("no root joint", "NO_ROOT")
    children = [[] for _ in range(n)]
    for k, p in enumerate(parents):
        if p is not None:
            children[p].append(k)
    order = []
    stack = [roots[0]]
    while stack:
        k = stack.pop()
        order.append(k)
        stack.extend(reversed(children[k]))
    if len(order) != n:
        missing = sorted(set(range(n)) - set(order))
        raise TreeError(f"joints not reachable from root: {missing}", "UNREACHABLE_JOINT")
    return tuple(order)


def validate_tree(tree: JointTree | Sequence[int | None]) -> bool:
    """Return True for a valid tree, raise :class:`TreeError` otherwise.

    Accepts either a constructed tree or a raw parent sequence (``None`` or
    ``-1`` for the root).
    """
    if isinstance(tree, JointTree):
        parents = tree.parents
    else:
        parents = tuple(None if p is None or p == -1 else int(p) for p in tree)
    _topological_order(parents)
    return True


def relation(tree: JointTree, k: int, t: int, kind: RelationKind) -> tuple[int, int]:
    """Index ``(k', t')`` of the joint that joint ``k`` at frame ``t`` is related to."""
    if not 0 <= k < tree.joint_count:
        raise IndexError(f"joint {k} outside [0, {tree.joint_count})")
    if kind.is_spatial:
        p = tree.parent(k)
        if p is None:
            raise RootHasNoParentError(f"joint {k} is the root")
        return p, t
    return k, t - kind.duration


@dataclass(frozen=True)
class PoseSequence:
    """Joint positions in millimetres, shape ``(T, K, D)``."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 3:
            raise ShapeMismatchError(f"expected (T, K, D) positions, got shape {pos.shape}")
        if pos.shape[0] < 1 or pos.shape[1] < 1 or pos.shape[2] not in (2, 3):
            raise ShapeMismatchError(f"bad pose shape {pos.shape}; D must be 2 or 3")
        if not np.all(np.isfinite(pos)):
            raise ValueError("pose positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def joint_count(self) -> int:
        return self.positions.shape[1]

    @property
    def dims(self) -> int:
        return self.positions.shape[2]

    def check_tree(self, tree: JointTree) -> None:
        if tree.joint_count != self.joint_count:
            raise ShapeMismatchError(
                f"pose has {self.joint_count} joints, tree has {tree.joint_count}"
            )


def as_positions(pose) -> np.ndarray:
    """Array view of a :class:`PoseSequence` or anything array-like."""
    if isinstance(pose, PoseSequence):
        return pose.positions
    return np.asarray(pose, dtype=float)
