import numpy as np
import pytest

from relfuse.skeleton import JointTree
from relfuse.synth import MotionSpec, NoiseSpec, corrupt_predictions, generate_sequence


@pytest.fixture
def chain3():
    return JointTree.chain(3)


@pytest.fixture
def human():
    # pelvis-rooted 17-joint body
    return JointTree.from_parent_list([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def synthetic_problem(tree, seed, durations, frames=30, fps=8.0, sigmas=(20.0, 5.0, 5.0), **kw):
    gt = generate_sequence(MotionSpec(tree, frames, fps=fps, seed=seed))
    return corrupt_predictions(tree, gt, durations, NoiseSpec(*sigmas, seed=seed), **kw)
