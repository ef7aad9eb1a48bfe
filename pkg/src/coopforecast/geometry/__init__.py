"""Two-view epipolar geometry: F, E, relative pose, and frame transfer."""
from coopforecast.geometry.epipolar import (
    CameraIntrinsics,
    Correspondences,
    algebraic_residuals,
    estimate_fundamental_dlt,
    load_correspondences_csv,
    ransac_fundamental,
    sampson_distance,
)
from coopforecast.geometry.essential import (
    decompose_essential,
    essential_from_fundamental,
    essential_from_pose,
    fundamental_from_pose,
    triangulate_midpoint,
)
from coopforecast.geometry.pose import (
    EGO,
    FRAMES,
    OTHER,
    WORLD,
    PointSet,
    RelativePose,
    set_scale,
    transform_to_ego,
    transform_to_other,
    transform_velocity,
)
from coopforecast.geometry.rotation import (
    EulerAngles,
    euler_to_rotation,
    rotation_angle_deg,
    rotation_to_euler,
)


def recover_pose(matches, K1, K2, d_true, *, iterations=1000, confidence=0.99,
                 threshold=1.0, rng_seed=0):
    """Full POSE stage: RANSAC F, E, cheirality decomposition, metric scale.

    Returns (pose, inlier_mask).
    """
    F, mask = ransac_fundamental(matches, iterations, confidence, threshold, rng_seed)
    E = essential_from_fundamental(F, K1, K2)
    pose = decompose_essential(E, matches, K1, K2, mask)
    return set_scale(pose, d_true), mask


__all__ = [
    "CameraIntrinsics",
    "Correspondences",
    "EGO",
    "EulerAngles",
    "FRAMES",
    "OTHER",
    "PointSet",
    "RelativePose",
    "WORLD",
    "algebraic_residuals",
    "decompose_essential",
    "essential_from_fundamental",
    "essential_from_pose",
    "estimate_fundamental_dlt",
    "euler_to_rotation",
    "fundamental_from_pose",
    "load_correspondences_csv",
    "ransac_fundamental",
    "recover_pose",
    "rotation_angle_deg",
    "rotation_to_euler",
    "sampson_distance",
    "set_scale",
    "transform_to_ego",
    "transform_to_other",
    "transform_velocity",
    "triangulate_midpoint",
]
