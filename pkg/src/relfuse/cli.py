"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 invalid input, 5 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as fileio
from .errors import NotPositiveDefiniteError, RelfuseError, ZeroTotalWeightError
from .metrics import (
    bone_error,
    displ_error,
    displacement_bins,
    displacement_magnitudes,
    joint_error,
    pcf,
)
from .relations import FAMILIES, WeightSpec, build_distance_map, build_weight_map, compute_bone_vectors, weighted_inference
from .skeleton import JointTree
from .synth import FRAME_RATES, MotionSpec, NoiseSpec, corrupt_predictions, generate_sequence
from .tracker import PRESETS, dense_oracle_solve, objective_value, solve_tracking

log = logging.getLogger("relfuse")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3, 4, 5

H36M_NAMES = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine",
    "thorax", "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)


class UsageError(Exception):
    pass


def parse_tree(text: str) -> JointTree:
    """``chain:N``, ``star:N``, ``h36m`` or an explicit parent list like ``-1,0,1``."""
    text = text.strip()
    try:
        if text == "h36m":
            return JointTree.from_parent_list(H36M_PARENTS, H36M_NAMES)
        if text.startswith("chain:"):
            n = int(text.split(":", 1)[1])
            if n < 1:
                raise ValueError
            return JointTree.chain(n)
        if text.startswith("star:"):
            n = int(text.split(":", 1)[1])
            if n < 1:
                raise ValueError
            return JointTree.from_parent_list([-1] + [0] * (n - 1))
        return JointTree.from_parent_list([int(p) for p in text.split(",")])
    except RelfuseError as exc:
        raise UsageError(f"--joints: {exc}") from exc
    except ValueError:
        raise UsageError(f"--joints: cannot parse {text!r} (use chain:N, star:N, h36m or a parent list)") from None


def parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def parse_range(text: str, what: str) -> tuple[float, float]:
    vals = parse_floats(text, what)
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or vals[0] > vals[1] or vals[0] < 0:
        raise UsageError(f"{what}: expected LO,HI with 0 <= LO <= HI")
    return vals[0], vals[1]


def parse_seeds(text: str) -> list[int]:
    """``a..b`` (inclusive) or a comma list."""
    try:
        if ".." in text:
            a, b = (int(v) for v in text.split("..", 1))
            if b < a:
                raise ValueError
            return list(range(a, b + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--seeds: expected a..b or a comma list, got {text!r}") from None


def parse_thresholds(text: str) -> list[float]:
    """``start:stop:step`` (inclusive of stop) or a comma list."""
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise UsageError(f"--thresholds: bad range {text!r}") from None
        if step <= 0 or stop < start:
            raise UsageError("--thresholds: need step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(n)]
    vals = parse_floats(text, "--thresholds")
    if vals != sorted(vals):
        raise UsageError("--thresholds must be ascending")
    return vals


def resolve_durations(preset: str | None, durations: str | None) -> tuple[str, tuple[int, ...]] | None:
    if preset is None and durations is None:
        return None
    if preset in (None, "custom"):
        if durations is None:
            raise UsageError("--preset custom needs --durations")
        try:
            ds = tuple(int(v) for v in durations.split(","))
        except ValueError:
            raise UsageError(f"--durations: expected integers, got {durations!r}") from None
        if 0 in ds or len(set(ds)) != len(ds):
            raise UsageError("--durations must be distinct and nonzero")
        return "custom", ds
    if preset not in PRESETS:
        raise UsageError(f"--preset must be one of {sorted(PRESETS)} or custom")
    if durations is not None:
        raise UsageError("--durations only applies with --preset custom")
    return preset, PRESETS[preset]


def resolve_gamma(text: str | None, n: int) -> tuple[float, ...] | None:
    if text is None:
        return None
    vals = parse_floats(text, "--gamma")
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise UsageError(f"--gamma: need 1 or {n} values, got {len(vals)}")
    if any(v < 0 for v in vals):
        raise UsageError("--gamma values must be nonnegative")
    return tuple(vals)


def thread_cap() -> int:
    env = os.environ.get("RELFUSE_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            log.warning("ignoring non-integer RELFUSE_THREADS=%r", env)
    return cpus


# synth ----------------------------------------------------------------------


def _motion_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("motion and noise")
    g.add_argument("--joints", default="chain:5", help="chain:N, star:N, h36m or parent list (-1 = root)")
    g.add_argument("--frames", type=int, default=50)
    g.add_argument("--fps", type=float, default=8.0, help="frame-rate tag: 25, 8 or 2.5")
    g.add_argument("--dims", type=int, default=3, choices=(2, 3))
    g.add_argument("--bone-length", type=float, default=250.0, help="mm, all bones")
    g.add_argument("--amplitude", default="0.1,0.4", help="joint swing range LO,HI in radians")
    g.add_argument("--frequency", default="0.1,0.5", help="swing frequency range LO,HI in Hz")
    g.add_argument("--root-amplitude", type=float, default=100.0, help="root sway in mm")
    g.add_argument("--sigma-single", type=float, default=20.0)
    g.add_argument("--sigma-bone", type=float, default=5.0)
    g.add_argument("--sigma-displ", type=float, default=5.0)


def _motion_from(args, seed: int) -> tuple[MotionSpec, NoiseSpec]:
    if args.fps not in FRAME_RATES:
        raise UsageError(f"--fps {args.fps:g} is not one of the valid frame-rate tags {{25, 8, 2.5}}")
    if args.frames < 2:
        raise UsageError("--frames must be at least 2")
    if args.bone_length <= 0:
        raise UsageError("--bone-length must be positive")
    for name in ("sigma_single", "sigma_bone", "sigma_displ", "root_amplitude"):
        if getattr(args, name) < 0:
            raise UsageError(f"--{name.replace('_', '-')} must be nonnegative")
    if not 0 <= seed < 2**64:
        raise UsageError("seeds must be 64-bit unsigned integers")
    tree = parse_tree(args.joints)
    motion = MotionSpec(
        tree=tree,
        frames=args.frames,
        fps=args.fps,
        bone_lengths=(args.bone_length,) * tree.joint_count,
        dims=args.dims,
        amplitude=parse_range(args.amplitude, "--amplitude"),
        frequency=parse_range(args.frequency, "--frequency"),
        root_amplitude=args.root_amplitude,
        seed=seed,
    )
    noise = NoiseSpec(args.sigma_single, args.sigma_bone, args.sigma_displ, seed=seed)
    return motion, noise


def cmd_synth(args) -> int:
    motion, noise = _motion_from(args, args.seed)
    if args.noise_seed is not None:
        noise = NoiseSpec(noise.sigma_single, noise.sigma_bone, noise.sigma_displ, seed=args.noise_seed)
    resolved = resolve_durations(args.preset, args.durations) or ("mfb", PRESETS["mfb"])
    _, ds = resolved
    gamma = resolve_gamma(args.gamma, len(ds))
    gt = generate_sequence(motion)
    problem = corrupt_predictions(motion.tree, gt, ds, noise, alpha=args.alpha, gamma=gamma)
    out = Path(args.out)
    problem_out = Path(args.problem_out) if args.problem_out else out.with_name(out.stem + ".problem.json")
    fileio.write_sequence(out, motion.tree, gt)
    ref = os.path.relpath(out.resolve(), problem_out.resolve().parent)
    fileio.write_problem(problem_out, problem, ground_truth_ref=ref)
    log.info("wrote %s and %s", out, problem_out)
    return EXIT_OK


# track ----------------------------------------------------------------------


def _solve(problem, solver: str):
    return dense_oracle_solve(problem) if solver == "dense" else solve_tracking(problem)


def cmd_track(args) -> int:
    if args.seeds is not None:
        return _track_batch(args)
    if args.problem is None:
        raise UsageError("track needs a problem file (or --seeds for batch mode)")
    resolved = resolve_durations(args.preset, args.durations)
    preset, ds = resolved if resolved else (None, None)
    gamma = resolve_gamma(args.gamma, len(ds)) if ds is not None else None
    loaded = fileio.read_problem(args.problem, durations=ds, alpha=args.alpha, gamma=gamma)
    problem = loaded.problem
    if args.gamma is not None and ds is None:
        problem = problem.with_settings(gamma=resolve_gamma(args.gamma, len(problem.durations)))
    if preset is None:
        preset = next((name for name, v in PRESETS.items() if v == problem.durations), "custom")
    result = _solve(problem, args.solver)
    report = {
        "version": fileio.FORMAT_VERSION,
        "kind": "track_report",
        "problem": str(args.problem),
        "preset": preset,
        "durations": list(problem.durations),
        "alpha": problem.alpha,
        "gamma": list(problem.gamma),
        "solver": args.solver,
        "objective": result.objective,
        "single_frame_objective": objective_value(problem, problem.single_frame),
        "residual_norm": result.residual_norm,
        "iterations": result.iterations,
        "wall_time_s": result.wall_time,
    }
    if loaded.ground_truth_path is not None and loaded.ground_truth_path.exists():
        _, gt = fileio.read_sequence(loaded.ground_truth_path)
        if gt.shape == problem.shape:
            report["joint_error_mm"] = joint_error(result.solution, gt).joint_error_mm
            report["single_frame_joint_error_mm"] = joint_error(problem.single_frame, gt).joint_error_mm
    if args.out:
        fileio.write_sequence(args.out, problem.tree, result.solution)
    if args.report:
        fileio.write_json_atomic(args.report, report)
    else:
        print(json.dumps(report, indent=1))
    return EXIT_OK


def _batch_one(job) -> list[dict]:
    args, seed, presets = job
    motion, noise = _motion_from(args, seed)
    gt = generate_sequence(motion)
    all_ds = sorted({d for _, ds in presets for d in ds}, key=lambda d: (abs(d), d < 0))
    alpha = 1.0 if args.alpha is None else args.alpha
    base = corrupt_predictions(motion.tree, gt, all_ds, noise, alpha=alpha)
    rows = [
        {
            "seed": seed,
            "method": "single-frame",
            "joint_error_mm": joint_error(base.single_frame, gt).joint_error_mm,
            "objective": "",
            "residual_norm": "",
        }
    ]
    for name, ds in presets:
        gamma = resolve_gamma(args.gamma, len(ds))
        result = _solve(base.with_settings(durations=ds, gamma=gamma), args.solver)
        rows.append(
            {
                "seed": seed,
                "method": name,
                "joint_error_mm": joint_error(result.solution, gt).joint_error_mm,
                "objective": result.objective,
                "residual_norm": result.residual_norm,
            }
        )
    return rows


def _track_batch(args) -> int:
    seeds = parse_seeds(args.seeds)
    if args.durations is not None:
        presets = [resolve_durations("custom", args.durations)]
    else:
        names = (args.preset or "f,fb,mf,mfb").split(",")
        presets = [resolve_durations(n.strip(), None) for n in names]
    # validate shared flags before fanning out
    _motion_from(args, seeds[0])
    jobs = [(args, s, presets) for s in seeds]
    workers = min(thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_batch_one, jobs))
    else:
        results = [_batch_one(j) for j in jobs]
    rows = [r for batch in sorted(results, key=lambda b: b[0]["seed"]) for r in batch]

    buf = io.StringIO()
    fields = ["seed", "method", "joint_error_mm", "objective", "residual_norm"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    if args.report:
        fileio.write_text_atomic(args.report, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())

    methods = ["single-frame"] + [name for name, _ in presets]
    summary = {}
    for m in methods:
        errs = np.array([r["joint_error_mm"] for r in rows if r["method"] == m])
        sem = float(errs.std(ddof=1) / np.sqrt(len(errs))) if len(errs) > 1 else 0.0
        summary[m] = (float(errs.mean()), sem)
    if args.summary:
        fileio.write_json_atomic(
            args.summary,
            {
                "version": fileio.FORMAT_VERSION,
                "kind": "batch_summary",
                "seeds": len(seeds),
                "methods": {m: {"mean_joint_error_mm": v[0], "sem_mm": v[1]} for m, v in summary.items()},
            },
        )
    if args.figure:
        from .plotting import plot_preset_errors

        plot_preset_errors(summary, args.figure)
    return EXIT_OK


# eval -----------------------------------------------------------------------


def cmd_eval(args) -> int:
    tree, pred = fileio.read_sequence(args.pred)
    gt_tree, gt = fileio.read_sequence(args.gt)
    if pred.shape != gt.shape or tree.parents != gt_tree.parents:
        raise RelfuseError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}", "SHAPE_MISMATCH")
    names = [tree.joint_name(k) for k in range(tree.joint_count)]
    report = joint_error(pred, gt, joint_names=names)
    thresholds = parse_thresholds(args.thresholds)
    report.pcf_curve = pcf(pred, gt, thresholds)
    extra = {}
    if args.problem:
        loaded = fileio.read_problem(args.problem)
        problem = loaded.problem
        if problem.shape != gt.shape:
            raise RelfuseError("problem shape does not match ground truth", "SHAPE_MISMATCH")
        report.bone_error_mm = bone_error(problem.bones, compute_bone_vectors(tree, gt))
        displ = {}
        for d in sorted(problem.displacements, key=lambda d: (abs(d), d < 0)):
            if abs(d) >= gt.shape[0]:
                continue
            displ[str(d)] = displ_error(problem.displacements[d], gt, d)
        if "1" in displ:
            report.displ_error_mm = displ["1"]
        extra["displ_error_by_duration"] = displ
        bins = displacement_bins(displacement_magnitudes(gt, 1))
        extra["displacement_bins"] = {"counts": bins.counts, "fractions": bins.fractions}

    if args.csv:
        fileio.write_text_atomic(args.csv, report.to_csv())
    else:
        sys.stdout.write(report.to_csv())
    if args.json:
        doc = {"version": fileio.FORMAT_VERSION, "kind": "metric_report", **report.to_dict(), **extra}
        fileio.write_json_atomic(args.json, doc)
    if args.pcf:
        lines = ["threshold_mm,fraction"] + [f"{t!r},{f!r}" for t, f in report.pcf_curve]
        fileio.write_text_atomic(args.pcf, "\n".join(lines) + "\n")
    if args.figure_dir:
        from .plotting import plot_pcf, plot_per_joint

        out = Path(args.figure_dir)
        out.mkdir(parents=True, exist_ok=True)
        plot_pcf({Path(args.pred).stem: report.pcf_curve}, out / "pcf.png")
        plot_per_joint(report, out / "per_joint.png")
    return EXIT_OK


# decode ---------------------------------------------------------------------


def _weight_specs(args) -> list[WeightSpec]:
    try:
        if args.ensemble:
            specs = []
            for item in args.ensemble.split(","):
                fam, _, beta = item.partition(":")
                specs.append(WeightSpec(fam.strip(), float(beta) if beta else 0.0))
            return specs
        return [WeightSpec(args.family, args.beta)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_decode(args) -> int:
    specs = _weight_specs(args)
    entries = fileio.read_relation_maps(args.maps)
    anchors = fileio.read_anchors(args.anchors) if args.anchors else {}
    vectors, failed = [], []
    for e in entries:
        key = fileio.map_key(e.joint, e.kind)
        anchor = anchors.get(key, e.anchor)
        if anchor is None:
            raise RelfuseError(f"no anchor for joint {e.joint} ({e.kind.label()})", "MISSING_ANCHOR")
        F = build_distance_map(anchor, e.relation_map.grid_shape, e.relation_map.transform)
        outs, totals = [], []
        try:
            for s in specs:
                W = build_weight_map(F, s)
                totals.append(float(W.sum()))
                outs.append(weighted_inference(e.relation_map, W))
        except ZeroTotalWeightError:
            failed.append(f"{e.joint} ({e.kind.label()})")
            continue
        value = outs[0] if len(outs) == 1 else np.mean(outs, axis=0)
        vectors.append(
            {
                "joint": e.joint,
                "relation": e.kind.kind,
                "duration": e.kind.duration,
                "value": [float(v) for v in value],
                "total_weight": totals[0] if len(totals) == 1 else totals,
            }
        )
    if failed:
        raise ZeroTotalWeightError("pixel weights sum to zero for joints: " + ", ".join(failed))
    doc = {
        "version": fileio.FORMAT_VERSION,
        "kind": "relation_vectors",
        "weights": [{"family": s.family, "beta": s.beta} for s in specs],
        "vectors": vectors,
    }
    if args.out:
        fileio.write_json_atomic(args.out, doc)
    else:
        print(json.dumps(doc, indent=1))
    return EXIT_OK


# wiring ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relfuse", description="Pose tracking from single-frame and relation predictions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic sequence and a noisy tracking problem")
    _motion_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--preset", default=None, help="durations to emit displacements for (default mfb)")
    p.add_argument("--durations", default=None, help="custom comma list of durations")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--gamma", default=None)
    p.add_argument("--out", required=True, help="ground-truth sequence file")
    p.add_argument("--problem-out", default=None, help="default: <out stem>.problem.json")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="solve the tracking problem")
    p.add_argument("problem", nargs="?", help="problem file")
    p.add_argument("--preset", default=None, help="f, fb, mf, mfb or custom (batch mode: comma list)")
    p.add_argument("--durations", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", default=None, help="one value or one per duration")
    p.add_argument("--solver", choices=("sparse", "dense"), default="sparse")
    p.add_argument("--out", default=None, help="tracked sequence file")
    p.add_argument("--report", default=None, help="run report (JSON; CSV in batch mode)")
    p.add_argument("--seeds", default=None, help="batch mode over synthetic seeds a..b")
    p.add_argument("--summary", default=None, help="batch mode: per-method summary JSON")
    p.add_argument("--figure", default=None, help="batch mode: bar chart of mean joint error")
    _motion_args(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="evaluate a predicted sequence against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--problem", default=None, help="also score its bone and displacement predictions")
    p.add_argument("--thresholds", default="0:150:5", help="PCF thresholds start:stop:step or list (mm)")
    p.add_argument("--csv", default=None)
    p.add_argument("--json", default=None)
    p.add_argument("--pcf", default=None, help="PCF curve as threshold_mm,fraction CSV")
    p.add_argument("--figure-dir", default=None, help="render pcf.png and per_joint.png here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="decode relation vectors from relation maps")
    p.add_argument("maps")
    p.add_argument("--anchors", default=None)
    p.add_argument("--family", choices=FAMILIES, default="binary")
    p.add_argument("--beta", type=float, default=5.0)
    p.add_argument("--ensemble", default=None, help="family:beta list, averaged")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_decode)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"relfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotPositiveDefiniteError as exc:
        print(f"relfuse {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RelfuseError as exc:
        print(f"relfuse {args.command}: invalid input [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"relfuse {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
