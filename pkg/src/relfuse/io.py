"""JSON file formats.

All documents carry ``"version": "1"`` and a ``"kind"`` tag. Joint indices are
0-based; the root's parent is written as ``-1``. Missing relation entries
(root bones, out-of-range displacements) are written as ``null``. Floats are
written with ``repr`` precision, which round-trips every finite double.

sequence::

    {"version": "1", "kind": "sequence", "units": "mm", "joint_count": K,
     "dims": D, "parents": [-1, 0, ...], "names": [...] (optional),
     "frames": [[[x, y, z], ...K], ...T]}

problem::

    {"version": "1", "kind": "problem", "units": "mm", "joint_count", "dims",
     "parents", "single_frame": frames, "bones": frames (root null),
     "displacements": {"<d>": frames (null where t-d is out of range)},
     "durations": [...], "alpha": a, "gamma": [...],
     "ground_truth": "<sequence file, relative to this file>" (optional)}

relation_maps::

    {"version": "1", "kind": "relation_maps",
     "grid": {"height": H, "width": W, "origin": [ox, oy], "scale": [sx, sy]},
     "maps": [{"joint": k, "relation": "spatial" | "temporal",
               "duration": d | null, "anchor": [x, y] (optional),
               "values": [[[...D], ...W], ...H]}]}

anchors::

    {"version": "1", "kind": "anchors",
     "anchors": [{"joint": k, "relation": ..., "duration": ..., "point": [x, y]}]}

relation_vectors (decode output)::

    {"version": "1", "kind": "relation_vectors", "weights": [{"family", "beta"}],
     "vectors": [{"joint", "relation", "duration", "value": [...], "total_weight"}]}
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InvalidProblemError, RelfuseError, TreeError
from .relations import GridTransform, RelationMap
from .skeleton import JointTree, PoseSequence, RelationKind
from .tracker import TrackingProblem

FORMAT_VERSION = "1"

_UMASK = os.umask(0)
os.umask(_UMASK)


class FormatError(RelfuseError):
    code = "BAD_FORMAT"


def write_json_atomic(path, payload: Any) -> None:
    """Serialise ``payload`` and replace ``path`` in one rename."""
    write_text_atomic(path, json.dumps(payload, indent=1, allow_nan=False) + "\n")


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    return doc


def _expect(doc: dict, kind: str, path) -> None:
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')!r}")
    if doc.get("kind") != kind:
        raise FormatError(f"{path}: expected kind {kind!r}, got {doc.get('kind')!r}")


def _frames_out(arr: np.ndarray) -> list:
    """Nested lists with NaN rows (undefined relation entries) written as null."""
    out = []
    for frame in arr:
        rows = []
        for v in frame:
            if np.all(np.isnan(v)):
                rows.append(None)
            else:
                if not np.all(np.isfinite(v)):
                    raise ValueError("cannot serialise partially non-finite vectors")
                rows.append([float(x) for x in v])
        out.append(rows)
    return out


def _frames_in(data, shape: tuple[int, int, int], what: str, allow_null: bool) -> np.ndarray:
    T, K, D = shape
    if not isinstance(data, list) or len(data) != T:
        raise FormatError(f"{what}: expected {T} frames")
    arr = np.full(shape, np.nan)
    for t, frame in enumerate(data):
        if not isinstance(frame, list) or len(frame) != K:
            raise FormatError(f"{what}: frame {t} must list {K} joints")
        for k, v in enumerate(frame):
            if v is None:
                if not allow_null:
                    raise FormatError(f"{what}: frame {t} joint {k} is null")
                continue
            if not isinstance(v, list) or len(v) != D:
                raise FormatError(f"{what}: frame {t} joint {k} must have {D} coordinates")
            try:
                vals = [float(x) for x in v]
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{what}: frame {t} joint {k}: {exc}") from exc
            if not all(math.isfinite(x) for x in vals):
                raise FormatError(f"{what}: frame {t} joint {k} is not finite")
            arr[t, k] = vals
    return arr


def _tree_from(doc: dict, path) -> JointTree:
    parents = doc.get("parents")
    K = doc.get("joint_count")
    if not isinstance(parents, list) or len(parents) != K:
        raise FormatError(f"{path}: parents must list joint_count entries")
    try:
        return JointTree.from_parent_list(parents, doc.get("names"))
    except TreeError as exc:
        raise FormatError(f"{path}: {exc}", exc.code) from exc


def _shape_from(doc: dict, path) -> tuple[int, int]:
    K, D = doc.get("joint_count"), doc.get("dims")
    if not isinstance(K, int) or K < 1 or D not in (2, 3):
        raise FormatError(f"{path}: joint_count must be positive and dims 2 or 3")
    if doc.get("units", "mm") != "mm":
        raise FormatError(f"{path}: units must be 'mm'")
    return K, D


def sequence_document(tree: JointTree, positions) -> dict:
    seq = PoseSequence(positions)
    seq.check_tree(tree)
    pos = seq.positions
    doc = {
        "version": FORMAT_VERSION,
        "kind": "sequence",
        "units": "mm",
        "joint_count": tree.joint_count,
        "dims": int(pos.shape[2]),
        "parents": tree.parent_list(),
    }
    if tree.names is not None:
        doc["names"] = list(tree.names)
    doc["frames"] = _frames_out(pos)
    return doc


def write_sequence(path, tree: JointTree, positions) -> None:
    write_json_atomic(path, sequence_document(tree, positions))


def parse_sequence(doc: dict, path="<sequence>") -> tuple[JointTree, np.ndarray]:
    _expect(doc, "sequence", path)
    K, D = _shape_from(doc, path)
    tree = _tree_from(doc, path)
    frames = doc.get("frames")
    if not isinstance(frames, list) or not frames:
        raise FormatError(f"{path}: frames must be a nonempty list")
    pos = _frames_in(frames, (len(frames), K, D), f"{path}: frames", allow_null=False)
    return tree, pos


def read_sequence(path) -> tuple[JointTree, np.ndarray]:
    return parse_sequence(read_json(path), path)


def problem_document(problem: TrackingProblem, ground_truth_ref: str | None = None, extra_durations=True) -> dict:
    """``extra_durations`` keeps displacement blocks beyond the active duration
    set so a file can be re-tracked with a larger preset."""
    T, K, D = problem.shape
    keys = sorted(problem.displacements if extra_durations else problem.durations, key=lambda d: (abs(d), d < 0))
    doc = {
        "version": FORMAT_VERSION,
        "kind": "problem",
        "units": "mm",
        "joint_count": K,
        "dims": D,
        "parents": problem.tree.parent_list(),
    }
    if problem.tree.names is not None:
        doc["names"] = list(problem.tree.names)
    doc.update(
        {
            "durations": list(problem.durations),
            "alpha": problem.alpha,
            "gamma": list(problem.gamma),
            "single_frame": _frames_out(problem.single_frame),
            "bones": _frames_out(problem.bones),
            "displacements": {str(d): _frames_out(problem.displacements[d]) for d in keys},
        }
    )
    if ground_truth_ref is not None:
        doc["ground_truth"] = ground_truth_ref
    return doc


def write_problem(path, problem: TrackingProblem, ground_truth_ref: str | None = None) -> None:
    write_json_atomic(path, problem_document(problem, ground_truth_ref))


@dataclass
class LoadedProblem:
    problem: TrackingProblem
    ground_truth_path: Path | None


def parse_problem(doc: dict, path="<problem>", durations=None, alpha=None, gamma=None) -> LoadedProblem:
    """Parse a problem document, optionally overriding its durations/weights.

    Raises :class:`InvalidProblemError` (naming the duration) when a
    requested duration has no displacement block.
    """
    _expect(doc, "problem", path)
    K, D = _shape_from(doc, path)
    tree = _tree_from(doc, path)
    sf = doc.get("single_frame")
    if not isinstance(sf, list) or not sf:
        raise FormatError(f"{path}: single_frame must be a nonempty list")
    shape = (len(sf), K, D)
    J = _frames_in(sf, shape, f"{path}: single_frame", allow_null=False)
    bones = _frames_in(doc.get("bones"), shape, f"{path}: bones", allow_null=True)
    raw = doc.get("displacements", {})
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: displacements must be an object keyed by duration")
    displacements = {}
    for key, frames in raw.items():
        try:
            d = int(key)
        except ValueError:
            raise FormatError(f"{path}: bad duration key {key!r}") from None
        displacements[d] = _frames_in(frames, shape, f"{path}: displacements[{key}]", allow_null=True)
    ds = durations if durations is not None else doc.get("durations", [1])
    for d in ds:
        if int(d) not in displacements:
            raise InvalidProblemError(f"no displacement block for duration {int(d)}", "MISSING_DURATION")
    if gamma is None:
        gamma = doc.get("gamma") if durations is None else None
    if alpha is None:
        alpha = doc.get("alpha", 1.0)
    try:
        problem = TrackingProblem(
            tree=tree,
            single_frame=J,
            bones=bones,
            displacements=displacements,
            durations=tuple(int(d) for d in ds),
            alpha=alpha,
            gamma=tuple(gamma) if gamma is not None else None,
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    gt_ref = doc.get("ground_truth")
    gt_path = None
    if gt_ref is not None:
        gt_path = Path(gt_ref)
        if not gt_path.is_absolute():
            gt_path = Path(path).parent / gt_path
    return LoadedProblem(problem, gt_path)


def read_problem(path, **overrides) -> LoadedProblem:
    return parse_problem(read_json(path), path, **overrides)


@dataclass
class MapEntry:
    joint: int
    kind: RelationKind
    relation_map: RelationMap
    anchor: tuple[float, float] | None = None


def _kind_from(entry: dict, where: str) -> RelationKind:
    rel = entry.get("relation")
    try:
        if rel == "spatial":
            return RelationKind.spatial()
        if rel == "temporal":
            return RelationKind.temporal(int(entry.get("duration")))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from exc
    raise FormatError(f"{where}: relation must be 'spatial' or 'temporal'")


def map_key(joint: int, kind: RelationKind) -> tuple[int, str, int | None]:
    return joint, kind.kind, kind.duration


def parse_relation_maps(doc: dict, path="<maps>") -> list[MapEntry]:
    _expect(doc, "relation_maps", path)
    grid = doc.get("grid", {})
    try:
        H, W = int(grid["height"]), int(grid["width"])
        transform = GridTransform(
            tuple(float(v) for v in grid.get("origin", (0.0, 0.0))),
            tuple(float(v) for v in grid.get("scale", (1.0, 1.0))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad grid block ({exc})") from exc
    entries = []
    for i, m in enumerate(doc.get("maps", [])):
        where = f"{path}: maps[{i}]"
        kind = _kind_from(m, where)
        vals = np.asarray(m.get("values"), dtype=float)
        if vals.ndim == 2:
            vals = vals[..., None]
        if vals.ndim != 3 or vals.shape[:2] != (H, W):
            raise FormatError(f"{where}: values must be a {H}x{W} grid of vectors, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"{where}: values must be finite")
        anchor = m.get("anchor")
        entries.append(
            MapEntry(
                joint=int(m.get("joint")),
                kind=kind,
                relation_map=RelationMap(vals, transform),
                anchor=None if anchor is None else (float(anchor[0]), float(anchor[1])),
            )
        )
    if not entries:
        raise FormatError(f"{path}: no maps")
    return entries


def read_relation_maps(path) -> list[MapEntry]:
    return parse_relation_maps(read_json(path), path)


def read_anchors(path) -> dict[tuple[int, str, int | None], tuple[float, float]]:
    doc = read_json(path)
    _expect(doc, "anchors", path)
    out = {}
    for i, a in enumerate(doc.get("anchors", [])):
        kind = _kind_from(a, f"{path}: anchors[{i}]")
        pt = a.get("point")
        out[map_key(int(a.get("joint")), kind)] = (float(pt[0]), float(pt[1]))
    return out


def relation_maps_document(entries: list[MapEntry]) -> dict:
    first = entries[0].relation_map
    H, W = first.grid_shape
    maps = []
    for e in entries:
        m = {
            "joint": e.joint,
            "relation": e.kind.kind,
            "duration": e.kind.duration,
            "values": e.relation_map.values.tolist(),
        }
        if e.anchor is not None:
            m["anchor"] = [float(e.anchor[0]), float(e.anchor[1])]
        maps.append(m)
    return {
        "version": FORMAT_VERSION,
        "kind": "relation_maps",
        "grid": {
            "height": H,
            "width": W,
            "origin": list(first.transform.origin),
            "scale": list(first.transform.scale),
        },
        "maps": maps,
    }
