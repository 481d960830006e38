"""Rigid transforms, rotation conversions and pinhole projection"""

from src.geometry.transforms import (
    RigidTransform, CalibrationParams, axis_angle_to_matrix, matrix_to_axis_angle,
    matrix_to_quaternion, quaternion_to_matrix, rotation_angle, euler_xyz, compose, inverse,
)
from src.geometry.camera import (
    CameraIntrinsics, PixelPoint, Z_MIN, project_point, project_point_delayed,
    project_points, load_intrinsics, save_intrinsics, load_kitti_calibration,
)
