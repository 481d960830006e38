"""Two-view visual odometry for per-frame velocity"""

from src.odometry.essential import (
    RansacSettings, EssentialMatrix, RelativePose, hartley_normalize, eight_point_essential,
    enforce_essential_constraints, sampson_distance_px, essential_from_pose, triangulate_points,
    estimate_essential_ransac, decompose_essential,
)
from src.odometry.velocity import (
    VelocityEstimate, SUPPLIED_SPEED, SUPPLIED_VECTOR, velocity_from_pose, estimate_velocity,
    load_velocity_csv, save_velocity_csv, velocity_for_frame,
)
