"""
Pinhole camera model and the plain / delay-compensated projections
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from src.geometry.transforms import RigidTransform
from src.utils.errors import InputError, ParseError
from src.utils.helpers import parse_key_value_file, parse_float_field, require_file, format_float

logger = logging.getLogger(__name__)

# Camera-frame depth at or below which a point is not projectable (m)
Z_MIN = 1e-3

INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pure pinhole intrinsics (no skew, no distortion) and the image size"""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("width", "height"):
            value = getattr(self, name)
            if int(value) != value:
                raise InputError(f"{name} must be an integer, got {value}")
            object.__setattr__(self, name, int(value))
        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise InputError(f"image size must be positive ({self.width}x{self.height})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PixelPoint:
    """Continuous image coordinates of a projected point"""

    u: float
    v: float
    source_index: int


def project_points(points, rotation, translation,
                   intrinsics: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized K[Rp + t] followed by the homogeneous division

    The sums are written out per component so the result for a point does not
    depend on how many other points are projected with it.

    Returns:
        (uv array (N, 2), valid mask (N,)); rows with depth <= Z_MIN are NaN
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rotation = np.asarray(rotation, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)

    x = points[:, 0:1]
    y = points[:, 1:2]
    z = points[:, 2:3]
    camera = x * rotation[:, 0] + y * rotation[:, 1] + z * rotation[:, 2] + translation

    px = intrinsics.fx * camera[:, 0] + intrinsics.cx * camera[:, 2]
    py = intrinsics.fy * camera[:, 1] + intrinsics.cy * camera[:, 2]
    pz = camera[:, 2]

    valid = pz > Z_MIN
    safe_z = np.where(valid, pz, 1.0)
    uv = np.stack([px / safe_z, py / safe_z], axis=1)
    uv[~valid] = np.nan
    return uv, valid


def delayed_translation(translation, velocity, delay: float) -> np.ndarray:
    """t + v * delay; with a zero delay the translation is returned as-is"""
    translation = np.asarray(translation, dtype=np.float64)
    if delay == 0:
        return translation
    return translation + np.asarray(velocity, dtype=np.float64) * delay


def project_point(p, transform: RigidTransform,
                  intrinsics: CameraIntrinsics) -> Optional[PixelPoint]:
    """Project one LIDAR-frame point; None when it is behind or grazing the camera"""
    uv, valid = project_points(p, transform.rotation, transform.translation, intrinsics)
    if not valid[0]:
        return None
    return PixelPoint(float(uv[0, 0]), float(uv[0, 1]), 0)


def project_point_delayed(p, transform: RigidTransform, velocity, delay: float,
                          intrinsics: CameraIntrinsics) -> Optional[PixelPoint]:
    """Projection with the translation replaced by t + v * delay"""
    translation = delayed_translation(transform.translation, velocity, delay)
    uv, valid = project_points(p, transform.rotation, translation, intrinsics)
    if not valid[0]:
        return None
    return PixelPoint(float(uv[0, 0]), float(uv[0, 1]), 0)


def load_intrinsics(path) -> CameraIntrinsics:
    """Load fx, fy, cx, cy, width, height from a key=value file"""
    entries = parse_key_value_file(path)
    values = {}
    for key in INTRINSIC_KEYS:
        if key not in entries:
            raise ParseError(path, f"missing key {key!r}")
        text, line = entries[key]
        values[key] = parse_float_field(path, text, line, key)
    unknown = set(entries) - set(INTRINSIC_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise ParseError(path, f"unknown key {key!r}", entries[key][1])
    return CameraIntrinsics(**values)


def save_intrinsics(intrinsics: CameraIntrinsics, path) -> Path:
    path = Path(path)
    lines = [
        "# pinhole intrinsics (pixels)",
        f"fx={format_float(intrinsics.fx)}",
        f"fy={format_float(intrinsics.fy)}",
        f"cx={format_float(intrinsics.cx)}",
        f"cy={format_float(intrinsics.cy)}",
        f"width={intrinsics.width}",
        f"height={intrinsics.height}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_kitti_calibration(path, width: int, height: int,
                           camera: str = "P2") -> Tuple[CameraIntrinsics, RigidTransform]:
    """
    Read a KITTI calib.txt

    Accepts the odometry layout (``Tr:``) and the object layout
    (``Tr_velo_to_cam:`` plus ``R0_rect:``). The projection matrix's fourth
    column is folded into the returned translation so that
    K[Rp + t] reproduces P * Tr * p.
    """
    path = require_file(path)
    calib = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if ':' not in line:
                continue
            key, value = line.split(':', 1)
            try:
                calib[key.strip()] = np.array([float(x) for x in value.split()])
            except ValueError:
                raise ParseError(path, f"non-numeric entry for {key.strip()}", line_no) from None

    if camera not in calib:
        raise ParseError(path, f"missing projection matrix {camera}")
    tr_key = "Tr" if "Tr" in calib else "Tr_velo_to_cam"
    if tr_key not in calib:
        raise ParseError(path, "missing Tr / Tr_velo_to_cam")

    projection = calib[camera].reshape(3, 4)
    velo_to_cam = np.eye(4)
    velo_to_cam[:3, :] = calib[tr_key].reshape(3, 4)
    if "R0_rect" in calib:
        rect = np.eye(4)
        rect[:3, :3] = calib["R0_rect"].reshape(3, 3)
        velo_to_cam = rect @ velo_to_cam

    k = projection[:, :3]
    intrinsics = CameraIntrinsics(k[0, 0], k[1, 1], k[0, 2], k[1, 2], width, height)
    offset = intrinsics.inverse_matrix @ projection[:, 3]
    transform = RigidTransform(velo_to_cam[:3, :3], velo_to_cam[:3, 3] + offset)
    logger.info(f"Loaded KITTI calibration from {path} ({camera}, {tr_key})")
    return intrinsics, transform
