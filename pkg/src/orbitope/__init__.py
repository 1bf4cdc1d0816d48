"""Rigid pose estimation over the convex hulls of SO(n) and SE(n), n = 2, 3."""

from .baselines import LmConfig, horn_svd, levenberg_marquardt, pca_align
from .bench import ExperimentSpec, ResultRow, emit_csv, run, time_method
from .conic import LmiQuadraticProgram, SolverConfig, SolverResult, soft_threshold, solve_hull_qp
from .estimation import (
    CorrespondenceSet,
    EstimateReport,
    ProjectionSpec,
    assemble,
    center_translation,
    estimate,
    estimate_robust,
)
from .geometry import (
    HullPose,
    RigidPose,
    Rotation2Hull,
    gram_to_rotation,
    hull_membership,
    hull_membership_so2,
    hull_membership_so3,
    project_to_rotation,
    quat_to_rotation,
    random_rotation,
    so3_lmi,
)
from .pointcloud import (
    CorruptionSpec,
    PointCloud,
    PointCloudParseError,
    corrupt,
    normalize_model,
    parse_csv,
    parse_ply,
    serialize_csv,
    serialize_ply,
    synthetic_bunny,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
