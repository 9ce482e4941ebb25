"""Pose tracking that fuses single-frame joint predictions with predicted
bone vectors and joint displacements."""

from .errors import RelfuseError
from .metrics import MetricReport, bone_error, displ_error, displacement_bins, joint_error, pcf
from .relations import (
    GridTransform,
    RelationMap,
    WeightSpec,
    build_distance_map,
    build_weight_map,
    compute_bone_vectors,
    compute_displacements,
    decode,
    relation_loss,
    weighted_inference,
)
from .skeleton import JointTree, PoseSequence, RelationKind, relation, validate_tree
from .synth import MotionSpec, NoiseSpec, corrupt_predictions, generate_sequence
from .tracker import (
    PRESETS,
    TrackedResult,
    TrackingProblem,
    assemble_system,
    dense_oracle_solve,
    objective_value,
    solve_tracking,
)

__version__ = "0.1.0"
