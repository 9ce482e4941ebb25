import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relfuse.errors import AnchorNotFiniteError, ShapeMismatchError, ZeroDurationError, ZeroTotalWeightError
from relfuse.relations import (
    GridTransform,
    RelationMap,
    WeightSpec,
    build_distance_map,
    build_weight_map,
    compute_bone_vectors,
    compute_displacements,
    constant_map,
    decode,
    relation_loss,
    weighted_inference,
)
from relfuse.skeleton import JointTree


def test_bone_vector_subtraction():
    tree = JointTree.chain(2)
    pose = np.array([[[0.0, 0, 0], [1, 2, 2]]])
    bones = compute_bone_vectors(tree, pose)
    assert np.array_equal(bones[0, 1], [1, 2, 2])
    assert np.all(np.isnan(bones[:, 0]))
    pose[0, 1] = pose[0, 0]
    assert np.array_equal(compute_bone_vectors(tree, pose)[0, 1], [0, 0, 0])


def test_bones_reconstruct_pose(rng, human):
    pose = rng.normal(size=(4, human.joint_count, 3)) * 300
    bones = compute_bone_vectors(human, pose)
    rebuilt = np.zeros_like(pose)
    rebuilt[:, human.root] = pose[:, human.root]
    for k in human.topological_order()[1:]:
        rebuilt[:, k] = rebuilt[:, human.parent(k)] + bones[:, k]
    np.testing.assert_allclose(rebuilt, pose, atol=1e-9)


def test_displacements():
    pose = np.array([[[2.0, 3, 5]], [[5.0, 5, 5]]])
    disp = compute_displacements(pose, 1)
    assert np.array_equal(disp[1, 0], [3, 2, 0])
    assert np.all(np.isnan(disp[0]))
    static = np.repeat(pose[:1], 5, axis=0)
    assert np.all(compute_displacements(static, 2)[2:] == 0)
    with pytest.raises(ZeroDurationError):
        compute_displacements(pose, 0)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_displacement_antisymmetry(rng, d):
    pose = rng.normal(size=(10, 4, 3))
    fwd = compute_displacements(pose, d)
    bwd = compute_displacements(pose, -d)
    # pair (t, t-d) forward equals minus the pair (t-d, t) backward
    np.testing.assert_array_equal(fwd[d:], -bwd[:-d])


def test_distance_map_examples():
    F = build_distance_map((2.0, 2.0), (5, 5))
    assert F[2, 4] == 2.0 and F[2, 2] == 0.0
    assert F[0, 0] == pytest.approx(math.sqrt(8))
    with pytest.raises(AnchorNotFiniteError):
        build_distance_map((float("nan"), 0.0), (5, 5))


def test_distance_map_uses_grid_transform():
    tf = GridTransform(origin=(100.0, 50.0), scale=(4.0, 4.0))
    F = build_distance_map((108.0, 62.0), (8, 8), tf)
    assert F[3, 2] == 0.0


@pytest.mark.parametrize("anchor", [(-3.2, 1.4), (9.5, -2.0), (12.0, 12.0), (2.2, 7.9)])
def test_distance_map_outside_anchor_minimum_on_border(anchor):
    H, W = 6, 5
    F = build_distance_map(anchor, (H, W))
    # exhaustive scan oracle
    best, where = math.inf, None
    for r in range(H):
        for c in range(W):
            dist = math.hypot(c - anchor[0], r - anchor[1])
            assert F[r, c] == pytest.approx(dist, abs=1e-12)
            if dist < best:
                best, where = dist, (r, c)
    assert F.min() == pytest.approx(best)
    assert F[where] == F.min()
    if not (0 <= anchor[0] <= W - 1 and 0 <= anchor[1] <= H - 1):
        assert where[0] in (0, H - 1) or where[1] in (0, W - 1)


def test_weight_families():
    F = np.array([[3.0, 7.0, 10.0, 0.0]])
    assert build_weight_map(F, WeightSpec("binary", 5)).tolist() == [[1, 0, 0, 1]]
    assert build_weight_map(F, WeightSpec("exponential", 0.1))[0, 2] == pytest.approx(0.367879, abs=1e-6)
    assert build_weight_map(F, WeightSpec("gaussian", 0.01))[0, 2] == pytest.approx(0.367879, abs=1e-6)
    lin = build_weight_map(F, WeightSpec("linear", 0.2))
    np.testing.assert_allclose(lin, [[0.4, 0.0, 0.0, 1.0]])
    assert build_weight_map(F, WeightSpec("joint-one")).tolist() == [[0, 0, 0, 1]]
    assert build_weight_map(F, WeightSpec("full")).tolist() == [[1, 1, 1, 1]]


def test_binary_endpoints():
    F = build_distance_map((3.0, 4.0), (9, 7))
    assert np.array_equal(build_weight_map(F, WeightSpec("binary", 0)), build_weight_map(F, WeightSpec("joint-one")))
    assert np.array_equal(build_weight_map(F, WeightSpec("binary", F.max())), build_weight_map(F, WeightSpec("full")))


def test_joint_one_ties_share_weight():
    F = build_distance_map((1.5, 1.0), (3, 4))
    W = build_weight_map(F, WeightSpec("joint-one"))
    assert W.sum() == 2 and W[1, 1] == W[1, 2] == 1


@given(st.sampled_from(["binary", "gaussian", "linear", "exponential"]), st.floats(0, 10))
def test_weight_one_at_anchor_and_in_unit_interval(family, beta):
    F = build_distance_map((2.0, 3.0), (6, 6))
    W = build_weight_map(F, WeightSpec(family, beta))
    assert W[3, 2] == 1.0
    assert np.all((W >= 0) & (W <= 1))


@given(st.floats(0, 20), st.floats(0, 20))
def test_binary_monotone_in_beta(b1, b2):
    lo, hi = sorted((b1, b2))
    F = build_distance_map((1.3, 2.7), (8, 8))
    assert np.all(build_weight_map(F, WeightSpec("binary", hi)) >= build_weight_map(F, WeightSpec("binary", lo)))


def test_weight_spec_validation():
    with pytest.raises(ValueError):
        WeightSpec("cosine", 1)
    with pytest.raises(ValueError):
        WeightSpec("binary", -1)


def test_weighted_inference_direct_sum_oracle():
    M = np.array([[1.0, 3.0], [5.0, 7.0]])
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    num = den = 0.0
    for r in range(2):
        for c in range(2):
            num += W[r, c] * M[r, c]
            den += W[r, c]
    assert num / den == 4.0
    assert weighted_inference(M, W)[0] == 4.0


def test_weighted_inference_constant_and_single_pixel(rng):
    v = np.array([12.5, -3.25, 0.1])
    M = constant_map(v, (7, 9))
    W = rng.uniform(0, 1, size=(7, 9))
    assert np.array_equal(weighted_inference(M, W), v)
    M = rng.normal(size=(7, 9, 3))
    F = build_distance_map((4.0, 2.0), (7, 9))
    out = weighted_inference(M, build_weight_map(F, WeightSpec("joint-one")))
    assert np.array_equal(out, M[2, 4])


def test_weighted_inference_errors():
    with pytest.raises(ZeroTotalWeightError):
        weighted_inference(np.ones((2, 2, 3)), np.zeros((2, 2)))
    with pytest.raises(ShapeMismatchError):
        weighted_inference(np.ones((2, 2, 3)), np.ones((3, 2)))


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_weighted_inference_scale_invariant(scale, seed):
    r = np.random.default_rng(seed)
    M = r.normal(size=(5, 6, 3))
    W = r.uniform(0.01, 1, size=(5, 6))
    np.testing.assert_allclose(weighted_inference(M, W * scale), weighted_inference(M, W), rtol=1e-12, atol=1e-12)


def test_ensemble_is_mean_of_members(rng):
    M = RelationMap(rng.normal(size=(8, 8, 3)))
    specs = [WeightSpec("binary", 2), WeightSpec("gaussian", 0.1), WeightSpec("exponential", 0.5)]
    members = [decode(M, (3.3, 4.1), s) for s in specs]
    np.testing.assert_allclose(decode(M, (3.3, 4.1), specs), np.mean(members, axis=0))


def test_roundtrip_constant_map_recovers_relations(rng, human):
    pose = rng.normal(size=(3, human.joint_count, 3)) * 200
    bones = compute_bone_vectors(human, pose)
    disp = compute_displacements(pose, 2)
    for vec in (bones[1, 5], disp[2, 3]):
        M = constant_map(vec, (16, 16))
        for spec in (WeightSpec("binary", 5), WeightSpec("linear", 0.05), WeightSpec("full")):
            assert np.array_equal(decode(M, (7.3, 9.9), spec), vec)


def test_relation_loss_examples(rng):
    M = rng.normal(size=(4, 4, 3))
    W = rng.uniform(size=(4, 4))
    assert relation_loss(M, M, W) == 0
    assert relation_loss(M, M + 1, np.zeros((4, 4))) == 0
    pre = np.zeros((1, 1, 3))
    gt = np.array([[[-1.0, 2.0, -3.0]]])
    assert relation_loss(pre, gt, np.ones((1, 1))) == 6.0
    with pytest.raises(ShapeMismatchError):
        relation_loss(M, M[:3], W)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_relation_loss_triangle_and_nonnegative(seed):
    r = np.random.default_rng(seed)
    a, b, gt = (r.normal(size=(3, 4, 2)) for _ in range(3))
    W = r.uniform(size=(3, 4))
    la, lb = relation_loss(a, gt, W), relation_loss(b, gt, W)
    # loss(a) <= loss(b) + weighted distance(a, b)
    assert la <= lb + relation_loss(a, b, W) + 1e-12
    assert la >= 0


def test_relation_loss_subgradient_matches_finite_difference(rng):
    pre = rng.normal(size=(5, 5, 3))
    gt = rng.normal(size=(5, 5, 3))
    W = rng.uniform(size=(5, 5))
    h = 1e-4
    for _ in range(20):
        r, c, d = rng.integers(0, 5), rng.integers(0, 5), rng.integers(0, 3)
        diff = pre[r, c, d] - gt[r, c, d]
        if abs(diff) <= 2 * h:
            continue
        up, dn = pre.copy(), pre.copy()
        up[r, c, d] += h
        dn[r, c, d] -= h
        fd = (relation_loss(up, gt, W) - relation_loss(dn, gt, W)) / (2 * h)
        assert abs(fd - W[r, c] * np.sign(diff)) <= 1e-6
