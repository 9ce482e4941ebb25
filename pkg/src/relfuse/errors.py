"""Exception types.

Every error carries a short machine-readable ``code`` so the CLI can map
failures onto stable exit codes.
"""

from __future__ import annotations


class RelfuseError(Exception):
    code = "ERROR"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class TreeError(RelfuseError):
    """Invalid joint tree. ``code`` is one of CYCLE_DETECTED, MULTIPLE_ROOTS,
    DANGLING_PARENT (or NO_ROOT / UNREACHABLE_JOINT for the rarer shapes)."""


class RootHasNoParentError(RelfuseError):
    code = "ROOT_HAS_NO_PARENT"


class ZeroDurationError(RelfuseError):
    code = "ZERO_DURATION"


class ShapeMismatchError(RelfuseError):
    code = "SHAPE_MISMATCH"


class SupportMismatchError(RelfuseError):
    code = "SUPPORT_MISMATCH"


class AnchorNotFiniteError(RelfuseError):
    code = "ANCHOR_NOT_FINITE"


class ZeroTotalWeightError(RelfuseError):
    code = "ZERO_TOTAL_WEIGHT"


class InvalidProblemError(RelfuseError):
    code = "INVALID_PROBLEM"


class ProblemTooLargeError(RelfuseError):
    code = "PROBLEM_TOO_LARGE"


class NotPositiveDefiniteError(RelfuseError):
    code = "NOT_POSITIVE_DEFINITE"
