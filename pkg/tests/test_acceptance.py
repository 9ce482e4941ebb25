"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary lines are written
straight to the terminal regardless of output capture.
"""

import time

import numpy as np
import pytest

from relfuse import io as fileio
from relfuse.metrics import displ_error, displacement_bins, joint_error, pcf
from relfuse.relations import (
    GridTransform,
    RelationMap,
    WeightSpec,
    build_distance_map,
    decode,
    relation_loss,
)
from relfuse.skeleton import JointTree
from relfuse.synth import (
    FRAME_RATES,
    MotionSpec,
    NoiseSpec,
    corrupt_predictions,
    generate_sequence,
    mean_step_displacement,
    random_problem,
)
from relfuse.tracker import PRESETS, dense_oracle_solve, objective_value, solve_tracking

HUMAN = JointTree.from_parent_list([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15])
ORDER = ("f", "fb", "mf", "mfb")


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {tag}: {detail}")
        assert ok, f"{tag}: {detail}"

    return emit


def test_ac1_oracle_equivalence(report):
    rng = np.random.default_rng(20240101)
    weights = (0.1, 1.0, 10.0)
    start = time.perf_counter()
    worst = 0.0
    for i in range(200):
        preset = ORDER[i % 4]
        K, T = int(rng.integers(2, 7)), int(rng.integers(3, 31))
        n = len(PRESETS[preset])
        p = random_problem(i, K, T, PRESETS[preset], alpha=float(rng.choice(weights)),
                           gamma=tuple(float(g) for g in rng.choice(weights, size=n)))
        worst = max(worst, float(np.max(np.abs(solve_tracking(p).solution - dense_oracle_solve(p).solution))))
    elapsed = time.perf_counter() - start
    report("AC1 oracle equivalence", worst <= 1e-9 and elapsed < 60,
           f"max |sparse - dense| = {worst:.2e} (<= 1e-9) over 200 problems in {elapsed:.1f}s (< 60s)")


def test_ac2_noiseless_exactness(report):
    start = time.perf_counter()
    worst = {}
    for preset in ORDER:
        errs = []
        for seed in range(3):
            gt = generate_sequence(MotionSpec(HUMAN, 30, fps=8.0, seed=seed))
            p = corrupt_predictions(HUMAN, gt, PRESETS[preset], NoiseSpec(0.0, 0.0, 0.0, seed=seed))
            errs.append(np.max(np.abs(solve_tracking(p).solution - gt)))
        worst[preset] = max(errs)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-8 and elapsed < 5
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    report("AC2 noiseless exactness", ok, f"max coord error {detail} (<= 1e-8) in {elapsed:.2f}s (< 5s)")


def test_ac3_preset_ordering(report):
    start = time.perf_counter()
    seeds = range(100)
    methods = ("single-frame",) + ORDER
    errs = {m: [] for m in methods}
    for seed in seeds:
        gt = generate_sequence(MotionSpec(HUMAN, 50, fps=8.0, seed=seed))
        full = corrupt_predictions(HUMAN, gt, PRESETS["mfb"], NoiseSpec(20.0, 5.0, 5.0, seed=seed))
        errs["single-frame"].append(joint_error(full.single_frame, gt).joint_error_mm)
        for preset in ORDER:
            sub = full.with_settings(durations=PRESETS[preset])
            errs[preset].append(joint_error(solve_tracking(sub).solution, gt).joint_error_mm)
    elapsed = time.perf_counter() - start
    ok = elapsed < 300
    gaps = []
    for worse, better in zip(methods, methods[1:]):
        diff = np.asarray(errs[worse]) - np.asarray(errs[better])
        sem = diff.std(ddof=1) / np.sqrt(diff.size)
        z = diff.mean() / sem
        ok &= bool(diff.mean() > 0 and diff.mean() >= 3 * sem)
        gaps.append(f"{worse}>{better} by {diff.mean():.2f}mm ({z:.0f} SE)")
    means = ", ".join(f"{m}={np.mean(errs[m]):.2f}" for m in methods)
    report("AC3 preset ordering", ok, f"{means}; {'; '.join(gaps)}; {elapsed:.1f}s (< 300s)")


def test_ac4_degeneracy_endpoints(report):
    rng = np.random.default_rng(4)
    ok_one = ok_full = True
    for _ in range(50):
        H, W = (int(v) for v in rng.integers(2, 40, size=2))
        # dyadic scales and integer origins so pixel centres map back exactly
        tf = GridTransform(tuple(float(v) for v in rng.integers(-50, 50, size=2)),
                           tuple(float(v) for v in rng.choice([0.25, 0.5, 1.0, 2.0, 4.0], size=2)))
        M = RelationMap(rng.normal(size=(H, W, 3)), tf)
        # joint-one needs the anchor on a pixel centre; full only needs it inside the grid
        centre = tf.to_image(*rng.integers(0, [W, H]).astype(float))
        ok_one &= np.array_equal(decode(M, centre, WeightSpec("binary", 0.0)),
                                 decode(M, centre, WeightSpec("joint-one")))
        inside = tf.to_image(*rng.uniform(0, [W - 1, H - 1]))
        diameter = float(np.hypot(H - 1, W - 1))
        for beta in (diameter, diameter * 3):
            ok_full &= np.array_equal(decode(M, inside, WeightSpec("binary", beta)),
                                      decode(M, inside, WeightSpec("full")))
        ok_full &= float(build_distance_map(inside, (H, W), tf).max()) <= diameter
    report("AC4 degeneracy endpoints", ok_one and ok_full,
           f"binary(0)==joint-one: {ok_one}; binary(>=diameter)==full: {ok_full} (bitwise, 50 grids)")


def fd_gradient(problem, X, h=1e-5):
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        up, dn = X.copy(), X.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (objective_value(problem, up) - objective_value(problem, dn)) / (2 * h)
    return g


def test_ac5_gradient_checks(report):
    start = time.perf_counter()
    grad = 0.0
    for seed, preset in enumerate(ORDER):
        gt = generate_sequence(MotionSpec(HUMAN, 10, fps=8.0, seed=seed))
        p = corrupt_predictions(HUMAN, gt, PRESETS[preset], NoiseSpec(20.0, 5.0, 5.0, seed=seed))
        grad = max(grad, float(np.max(np.abs(fd_gradient(p, solve_tracking(p).solution)))))

    rng = np.random.default_rng(5)
    h, loss_dev, checked = 1e-4, 0.0, 0
    while checked < 200:
        pre, gt_map = rng.normal(size=(6, 6, 3)), rng.normal(size=(6, 6, 3))
        W = rng.uniform(size=(6, 6))
        r, c = rng.integers(0, 6, size=2)
        d = rng.integers(0, 3)
        diff = pre[r, c, d] - gt_map[r, c, d]
        if abs(diff) <= 2 * h:
            continue  # too close to the kink
        up, dn = pre.copy(), pre.copy()
        up[r, c, d] += h
        dn[r, c, d] -= h
        fd = (relation_loss(up, gt_map, W) - relation_loss(dn, gt_map, W)) / (2 * h)
        loss_dev = max(loss_dev, abs(fd - W[r, c] * np.sign(diff)))
        checked += 1
    elapsed = time.perf_counter() - start
    ok = grad <= 1e-7 and loss_dev <= 1e-6 and elapsed < 10
    report("AC5 gradient checks", ok,
           f"objective |grad|_inf = {grad:.1e} (<= 1e-7); loss subgradient dev = {loss_dev:.1e} (<= 1e-6); {elapsed:.1f}s (< 10s)")


def test_ac6_metric_identities(report):
    rng = np.random.default_rng(6)
    gt = rng.normal(scale=300, size=(20, 17, 3))
    pred = gt + np.array([3.0, 4.0, 0.0])
    offset = joint_error(pred, gt).joint_error_mm

    displ = 0.0
    motion = generate_sequence(MotionSpec(HUMAN, 30, seed=6))
    for sigma in (0.0, 20.0, 500.0):
        p = corrupt_predictions(HUMAN, motion, PRESETS["mfb"], NoiseSpec(sigma, 5.0, 0.0, seed=6))
        for d in p.durations:
            displ = max(displ, displ_error(p.displacements[d], motion, d))

    noisy = gt + rng.normal(scale=30, size=gt.shape)
    curve = pcf(noisy, gt, np.linspace(0, 1000, 201))
    fr = [f for _, f in curve]
    pcf_ok = all(a <= b for a, b in zip(fr, fr[1:])) and fr[0] == 0.0 and fr[-1] == 1.0

    bins = displacement_bins([25.0, 45.0, 70.0])
    bins_ok = bins.counts == {"easy": 1, "middle": 1, "hard": 1}
    mags = rng.uniform(0, 120, size=1000)
    bins_ok &= sum(displacement_bins(mags).counts.values()) == mags.size

    ok = offset == 5.0 and displ == 0.0 and pcf_ok and bins_ok
    report("AC6 metric identities", ok,
           f"offset fixture = {offset!r}; perfect displ error = {displ!r}; PCF monotone 0->1: {pcf_ok}; "
           f"bins 25/45/70 -> Easy/Middle/Hard: {bins_ok}")


def test_ac7_frame_rate_ordering(report):
    start = time.perf_counter()
    tree = JointTree.from_parent_list([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14])
    means = {}
    for fps in FRAME_RATES:
        means[fps] = float(np.mean([mean_step_displacement(generate_sequence(MotionSpec(tree, 50, fps=fps, seed=s)))
                                    for s in range(100)]))
    elapsed = time.perf_counter() - start
    ok = means[2.5] > means[8.0] > means[25.0] and elapsed < 60
    report("AC7 frame-rate ordering", ok,
           f"mean step displacement 2.5FPS={means[2.5]:.2f} > 8FPS={means[8.0]:.2f} > 25FPS={means[25.0]:.2f} mm; "
           f"{elapsed:.1f}s (< 60s)")


def test_ac8_determinism_and_round_trip(report, tmp_path):
    same = True
    for seed in range(5):
        gt = generate_sequence(MotionSpec(HUMAN, 20, seed=seed))
        p = corrupt_predictions(HUMAN, gt, PRESETS["mfb"], NoiseSpec(seed=seed))
        for tag in ("a", "b"):
            fileio.write_sequence(tmp_path / f"{tag}.json", HUMAN, gt)
            fileio.write_problem(tmp_path / f"{tag}.problem.json", p)
        gt2 = generate_sequence(MotionSpec(HUMAN, 20, seed=seed))
        p2 = corrupt_predictions(HUMAN, gt2, PRESETS["mfb"], NoiseSpec(seed=seed))
        fileio.write_sequence(tmp_path / "c.json", HUMAN, gt2)
        fileio.write_problem(tmp_path / "c.problem.json", p2)
        blobs = [(tmp_path / f"{t}.json").read_bytes() + (tmp_path / f"{t}.problem.json").read_bytes() for t in "abc"]
        same &= blobs[0] == blobs[1] == blobs[2]

    rng = np.random.default_rng(8)
    values = rng.normal(size=1000) * 10.0 ** rng.integers(-12, 12, size=1000)
    values[:4] = [0.0, -0.0, np.nextafter(0, 1), 1 / 3]
    chain = JointTree.chain(5)
    fileio.write_sequence(tmp_path / "rt.json", chain, values.reshape(100, 5, 2))
    _, back = fileio.read_sequence(tmp_path / "rt.json")
    lossless = back.tobytes() == values.reshape(100, 5, 2).tobytes()
    report("AC8 determinism and round trip", same and lossless,
           f"byte-identical synth output over 5 seeds: {same}; 1000-value round trip bit-exact: {lossless}")
