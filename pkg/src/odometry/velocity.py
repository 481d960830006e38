"""
Velocity estimates for delay compensation
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from src.data.semantic_io import FeatureCorrespondences
from src.geometry.camera import CameraIntrinsics
from src.odometry.essential import (
    RansacSettings, RelativePose, decompose_essential, estimate_essential_ransac,
)
from src.utils.errors import InputError, ParseError
from src.utils.helpers import format_float, require_file

logger = logging.getLogger(__name__)

SUPPLIED_SPEED = "supplied_speed"
SUPPLIED_VECTOR = "supplied_vector"


@dataclass(frozen=True)
class VelocityEstimate:
    """Camera-frame velocity (m/s) at the newer image of a frame pair"""

    v: np.ndarray
    scale_source: str
    frame_dt: Optional[float] = None
    frame_id: int = 0

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(v)):
            raise InputError(f"non-finite velocity {v}")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v))


def velocity_from_pose(pose: RelativePose, speed: float, frame_dt: float,
                       frame_id: int = 0) -> VelocityEstimate:
    """Scale the unit translation direction to the supplied speed"""
    if not speed >= 0:
        raise InputError(f"speed must be non-negative, got {speed}")
    if not frame_dt > 0:
        raise InputError(f"frame_dt must be positive, got {frame_dt}")
    direction = pose.translation_direction / np.linalg.norm(pose.translation_direction)
    return VelocityEstimate(direction * speed, SUPPLIED_SPEED, frame_dt, frame_id)


def estimate_velocity(correspondences: FeatureCorrespondences, intrinsics: CameraIntrinsics,
                      speed: float, frame_dt: float, settings: Optional[RansacSettings] = None,
                      frame_id: int = 0) -> VelocityEstimate:
    """RANSAC essential matrix, pose decomposition and scaling in one call"""
    essential, inliers = estimate_essential_ransac(correspondences, intrinsics, settings)
    pose = decompose_essential(essential, correspondences, inliers, intrinsics)
    estimate = velocity_from_pose(pose, speed, frame_dt, frame_id)
    logger.info(f"Frame {frame_id}: {pose.inlier_count}/{len(correspondences)} inliers, "
                f"velocity {np.round(estimate.v, 3).tolist()} m/s")
    return estimate


def load_velocity_csv(path) -> List[VelocityEstimate]:
    """Read "frame_id,vx,vy,vz" rows ('#' comments allowed)"""
    path = require_file(path)
    estimates = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        for row in reader:
            line = reader.line_num
            if not row or not "".join(row).strip() or row[0].lstrip().startswith('#'):
                continue
            if len(row) != 4:
                raise ParseError(path, f"expected 4 columns, got {len(row)}", line)
            try:
                frame_id = int(row[0])
                v = [float(x) for x in row[1:]]
            except ValueError:
                raise ParseError(path, f"malformed velocity row {','.join(row)!r}", line) from None
            if not all(np.isfinite(v)):
                raise ParseError(path, "non-finite velocity", line)
            estimates.append(VelocityEstimate(v, SUPPLIED_VECTOR, None, frame_id))
    return estimates


def save_velocity_csv(estimates: Sequence[VelocityEstimate], path) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(["# frame_id", "vx", "vy", "vz"])
        for estimate in estimates:
            writer.writerow([estimate.frame_id] + [format_float(x) for x in estimate.v])
    return path


def velocity_for_frame(estimates: Sequence[VelocityEstimate], frame_id: int) -> Optional[VelocityEstimate]:
    """The row for frame_id, or the only row of a single-row file"""
    for estimate in estimates:
        if estimate.frame_id == frame_id:
            return estimate
    if len(estimates) == 1:
        return estimates[0]
    return None
