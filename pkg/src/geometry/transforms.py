"""
Rigid transforms and rotation parameterizations
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from src.utils.errors import NotARotation, InputError

# Accepted deviation from orthonormality for incoming matrices
ROTATION_TOLERANCE = 1e-6
# Matrices closer than this to SO(3) are stored untouched
_EXACT_TOLERANCE = 1e-12


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def rotation_deviation(matrix: np.ndarray) -> float:
    """Largest elementwise deviation of R^T R from I, or inf for a reflection"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
        return float("inf")
    if np.linalg.det(matrix) <= 0:
        return float("inf")
    ortho = np.max(np.abs(matrix.T @ matrix - np.eye(3)))
    return float(max(ortho, abs(np.linalg.det(matrix) - 1.0)))


def check_rotation(matrix, tolerance: float = ROTATION_TOLERANCE) -> np.ndarray:
    """Validate a rotation matrix, snapping it onto SO(3) when it is slightly off

    Always returns a fresh writable array.
    """
    matrix = np.array(matrix, dtype=np.float64)
    deviation = rotation_deviation(matrix)
    if deviation > tolerance:
        raise NotARotation(f"not a rotation matrix (deviation {deviation:.3g})")
    if deviation > _EXACT_TOLERANCE:
        u, _, vt = np.linalg.svd(matrix)
        matrix = u @ vt
    return matrix


def axis_angle_to_matrix(axis_angle) -> np.ndarray:
    """Rodrigues' formula; the zero vector maps to the identity"""
    axis_angle = np.array(axis_angle, dtype=np.float64).reshape(3)
    if not np.any(axis_angle):
        return np.eye(3)
    return Rotation.from_rotvec(axis_angle).as_matrix()


def matrix_to_axis_angle(matrix) -> np.ndarray:
    matrix = check_rotation(matrix)
    return Rotation.from_matrix(matrix).as_rotvec()


def matrix_to_quaternion(matrix) -> np.ndarray:
    """
    Unit quaternion (w, x, y, z) with w >= 0

    When w == 0 the first non-zero vector component is made positive so
    the double cover resolves to a single representative.
    """
    matrix = check_rotation(matrix)
    x, y, z, w = Rotation.from_matrix(matrix).as_quat()
    q = np.array([w, x, y, z])
    if w < 0:
        q = -q
    elif w == 0:
        nonzero = q[1:][q[1:] != 0]
        if nonzero.size and nonzero[0] < 0:
            q = -q
    return q / np.linalg.norm(q)


def quaternion_to_matrix(quaternion) -> np.ndarray:
    w, x, y, z = np.array(quaternion, dtype=np.float64).reshape(4)
    return Rotation.from_quat(np.array([x, y, z, w])).as_matrix()


def rotation_angle(matrix) -> float:
    """Geodesic angle of a rotation in radians (axis-angle magnitude)"""
    return float(np.linalg.norm(matrix_to_axis_angle(matrix)))


def euler_xyz(matrix) -> np.ndarray:
    """Intrinsic x-y-z (roll, pitch, yaw) angles in radians"""
    matrix = check_rotation(matrix)
    return Rotation.from_matrix(matrix).as_euler("XYZ")


def canonical_axis_angle(axis_angle) -> np.ndarray:
    """Map an axis-angle vector into the canonical ball |w| <= pi"""
    axis_angle = np.array(axis_angle, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(axis_angle)):
        raise InputError(f"non-finite axis-angle {axis_angle}")
    if np.linalg.norm(axis_angle) < np.pi:
        return axis_angle
    return Rotation.from_rotvec(axis_angle).as_rotvec()


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation mapping LIDAR-frame points into the camera frame"""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise InputError(f"non-finite translation {translation}")
        object.__setattr__(self, "rotation", _frozen(check_rotation(self.rotation)))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        """Build from a 3x4 or 4x4 homogeneous matrix"""
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: x -> self(other(x))"""
        return compose(self, other)

    def inverse(self) -> "RigidTransform":
        return inverse(self)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b"""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(a: RigidTransform) -> RigidTransform:
    rotation_t = a.rotation.T
    return RigidTransform(rotation_t, -(rotation_t @ a.translation))


@dataclass(frozen=True)
class CalibrationParams:
    """
    The optimization vector: axis-angle rotation (rad), translation (m)
    and the LIDAR-to-camera delay (s)
    """

    axis_angle: np.ndarray
    translation: np.ndarray
    delay: float = 0.0

    def __post_init__(self):
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise InputError(f"non-finite translation {translation}")
        delay = float(self.delay)
        if not np.isfinite(delay):
            raise InputError(f"non-finite delay {delay}")
        object.__setattr__(self, "axis_angle", _frozen(canonical_axis_angle(self.axis_angle)))
        object.__setattr__(self, "translation", _frozen(translation))
        object.__setattr__(self, "delay", delay)

    @classmethod
    def from_transform(cls, transform: RigidTransform, delay: float = 0.0) -> "CalibrationParams":
        return cls(matrix_to_axis_angle(transform.rotation), transform.translation, delay)

    @classmethod
    def from_vector(cls, vector, delay: float = 0.0) -> "CalibrationParams":
        """Unpack a 6-vector (delay taken from the argument) or a 7-vector"""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape == (7,):
            delay = vector[6]
        elif vector.shape != (6,):
            raise InputError(f"expected 6 or 7 parameters, got {vector.shape}")
        return cls(vector[:3], vector[3:6], delay)

    def to_vector(self, dims: int = 6) -> np.ndarray:
        if dims == 6:
            return np.concatenate([self.axis_angle, self.translation])
        if dims == 7:
            return np.concatenate([self.axis_angle, self.translation, [self.delay]])
        raise InputError(f"dims must be 6 or 7, got {dims}")

    @property
    def rotation(self) -> np.ndarray:
        return axis_angle_to_matrix(self.axis_angle)

    def to_transform(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)

    def with_delay(self, delay: float) -> "CalibrationParams":
        return CalibrationParams(self.axis_angle, self.translation, delay)

    def quaternion(self) -> np.ndarray:
        return matrix_to_quaternion(self.rotation)
