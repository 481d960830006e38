"""
Synthetic ground-truth scenes

Box-shaped clusters in front of the camera, sampled as a labelled LIDAR
cloud and rasterized into a consistent segmentation mask, plus two-view
correspondences for the odometry chain.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from scipy.spatial.transform import Rotation

from src.alignment.feature_transform import round_to_grid
from src.data.semantic_io import (
    FeatureCorrespondences, SemanticMask, SemanticPointCloud,
    save_correspondences_csv, save_mask_pgm, save_point_cloud_csv,
)
from src.geometry.camera import Z_MIN, CameraIntrinsics, delayed_translation, project_points, save_intrinsics
from src.geometry.transforms import CalibrationParams, RigidTransform
from src.odometry.essential import essential_from_pose, sampson_distance_px
from src.odometry.velocity import SUPPLIED_VECTOR, VelocityEstimate, save_velocity_csv
from src.utils.errors import EmptyScene, InputError, TooFewVisible
from src.utils.helpers import ensure_directory, measure_performance

logger = logging.getLogger(__name__)

# Mask footprint samples per cloud point
OVERSAMPLE = 20
# Height of the ground plane below the camera (m, camera y axis points down)
GROUND_HEIGHT = 1.65
# Outlier pairs violate the true epipolar geometry by at least this much (px)
OUTLIER_MIN_ERROR_PX = 3.0


def kitti_like_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=720.0, fy=720.0, cx=620.0, cy=187.0, width=1242, height=375)


def kitti_like_extrinsics() -> RigidTransform:
    """Velodyne x-forward/y-left/z-up to camera x-right/y-down/z-forward, small lever arm"""
    rotation = np.array([[0.0, -1.0, 0.0],
                         [0.0, 0.0, -1.0],
                         [1.0, 0.0, 0.0]])
    return RigidTransform(rotation, np.array([0.0, -0.08, -0.27]))


@dataclass(frozen=True)
class SceneConfig:
    """Scene layout in the camera frame at image time (x right, y down, z forward)"""

    n_clusters: int = 5
    size_min: Tuple[float, float, float] = (1.5, 1.3, 3.5)
    size_max: Tuple[float, float, float] = (2.0, 1.7, 4.5)
    depth_range: Tuple[float, float] = (8.0, 30.0)
    lateral_range: Tuple[float, float] = (-8.0, 8.0)
    vertical_range: Tuple[float, float] = (0.6, 1.0)
    points_per_cluster: int = 200
    gt_transform: RigidTransform = field(default_factory=kitti_like_extrinsics)
    gt_delay: float = 0.0
    gt_velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    intrinsics: CameraIntrinsics = field(default_factory=kitti_like_intrinsics)
    seed: int = 0
    n_background_points: int = 0
    label_flip_rate: float = 0.0
    cloud_class_id: int = 10
    mask_class_id: int = 13
    background_class_id: int = 40

    def __post_init__(self):
        if self.n_clusters < 1:
            raise InputError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.points_per_cluster < 10:
            raise InputError(f"points_per_cluster must be >= 10, got {self.points_per_cluster}")
        if not Z_MIN < self.depth_range[0] <= self.depth_range[1]:
            raise InputError(f"depth range {self.depth_range} must lie beyond {Z_MIN} m")
        if self.lateral_range[0] > self.lateral_range[1] or self.vertical_range[0] > self.vertical_range[1]:
            raise InputError("empty lateral or vertical range")
        if any(lo <= 0 or lo > hi for lo, hi in zip(self.size_min, self.size_max)):
            raise InputError(f"invalid cluster size range {self.size_min}..{self.size_max}")
        if self.n_background_points < 0:
            raise InputError("n_background_points must be non-negative")
        if not 0 <= self.label_flip_rate <= 1:
            raise InputError(f"label_flip_rate must be in [0, 1], got {self.label_flip_rate}")
        if not np.isfinite(self.gt_delay) or not np.all(np.isfinite(self.gt_velocity)):
            raise InputError("gt delay and velocity must be finite")
        if not 0 <= self.mask_class_id <= 255:
            raise InputError(f"mask class id {self.mask_class_id} does not fit a PGM mask")

    @property
    def gt_params(self) -> CalibrationParams:
        return CalibrationParams.from_transform(self.gt_transform, self.gt_delay)


@dataclass(frozen=True)
class SceneBundle:
    cloud: SemanticPointCloud
    mask: SemanticMask
    velocity: np.ndarray
    gt: CalibrationParams
    intrinsics: CameraIntrinsics
    frame_id: int = 0


@dataclass(frozen=True)
class TwoViewSample:
    correspondences: FeatureCorrespondences
    gt_pose: RigidTransform
    outlier_mask: np.ndarray


def _box_surface(rng: np.random.Generator, center: np.ndarray, size: np.ndarray, count: int) -> np.ndarray:
    """Uniform samples on the surface of an axis-aligned box"""
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]]).repeat(2)
    face = rng.choice(6, size=count, p=areas / areas.sum())
    points = rng.uniform(-0.5, 0.5, size=(count, 3)) * size
    axis = face // 2
    sign = (face % 2) * 2.0 - 1.0
    points[np.arange(count), axis] = sign * size[axis] / 2.0
    return points + center


def _to_lidar(camera_points: np.ndarray, gt: CalibrationParams, velocity: np.ndarray) -> np.ndarray:
    """Invert the delay-compensated extrinsics: p = R^T (c - t - v delta)"""
    offset = delayed_translation(gt.translation, velocity, gt.delay)
    return (camera_points - offset) @ gt.rotation


def _rasterize(grid: np.ndarray, uv: np.ndarray, valid: np.ndarray, class_id: int) -> bool:
    """Fill the convex footprint of the valid projections plus every projected cell"""
    height, width = grid.shape
    uv = uv[valid]
    if len(uv) == 0:
        return False
    limit = 16 * max(width, height)
    corners = np.clip(np.floor(uv + 0.5), -limit, limit).astype(np.int32)
    hull = cv2.convexHull(corners.reshape(-1, 1, 2))
    cv2.fillConvexPoly(grid, hull, int(class_id))
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
    iu, iv = round_to_grid(uv[inside, 0], uv[inside, 1], width, height)
    grid[iv, iu] = class_id
    return bool(inside.any())


@measure_performance("scene generation")
def generate_scene(config: SceneConfig, frame_id: int = 0) -> SceneBundle:
    """
    Build one consistent (cloud, mask, velocity, gt) bundle

    Every cloud point of the target class that projects into the image with
    the ground-truth parameters lands on a mask pixel of the target class.

    Raises:
        EmptyScene: no cluster projects into the image
    """
    rng = np.random.default_rng([config.seed, frame_id])
    gt = config.gt_params
    velocity = np.array(config.gt_velocity, dtype=np.float64)
    translation = delayed_translation(gt.translation, velocity, gt.delay)
    intrinsics = config.intrinsics
    size_min = np.array(config.size_min)
    size_max = np.array(config.size_max)

    grid = np.zeros((intrinsics.height, intrinsics.width), dtype=np.uint8)
    cloud_points = []
    visible_clusters = 0
    for _ in range(config.n_clusters):
        center = np.array([
            rng.uniform(*config.lateral_range),
            rng.uniform(*config.vertical_range),
            rng.uniform(*config.depth_range),
        ])
        size = rng.uniform(size_min, size_max)
        dense = _to_lidar(_box_surface(rng, center, size, config.points_per_cluster * OVERSAMPLE), gt, velocity)
        uv, valid = project_points(dense, gt.rotation, translation, intrinsics)
        if _rasterize(grid, uv, valid, config.mask_class_id):
            visible_clusters += 1
        cloud_points.append(dense[:config.points_per_cluster])

    if visible_clusters == 0:
        raise EmptyScene(f"none of {config.n_clusters} clusters projects into the image")

    points = np.vstack(cloud_points)
    labels = np.full(len(points), config.cloud_class_id, dtype=np.uint32)
    if config.n_background_points:
        ground = np.column_stack([
            rng.uniform(*config.lateral_range, size=config.n_background_points),
            np.full(config.n_background_points, GROUND_HEIGHT),
            rng.uniform(*config.depth_range, size=config.n_background_points),
        ])
        points = np.vstack([points, _to_lidar(ground, gt, velocity)])
        labels = np.concatenate([labels, np.full(len(ground), config.background_class_id, dtype=np.uint32)])
    if config.label_flip_rate > 0:
        flip = rng.random(len(labels)) < config.label_flip_rate
        labels = np.where(flip & (labels == config.cloud_class_id), config.background_class_id,
                          np.where(flip, config.cloud_class_id, labels)).astype(np.uint32)

    logger.debug(f"Scene frame {frame_id}: {visible_clusters}/{config.n_clusters} clusters visible, "
                 f"{len(points)} points")
    return SceneBundle(
        cloud=SemanticPointCloud(points, labels, frame_id),
        mask=SemanticMask(grid, frame_id),
        velocity=velocity,
        gt=gt,
        intrinsics=intrinsics,
        frame_id=frame_id,
    )


def generate_scenes(config: SceneConfig, frames: int) -> List[SceneBundle]:
    """Independent frames sharing the ground truth, one random layout each"""
    return [generate_scene(config, frame_id) for frame_id in range(frames)]


def perturb_params(gt: CalibrationParams, trans_range: float, rot_range: float, seed: int) -> CalibrationParams:
    """
    Uniform per-axis translation noise (m) and per-Euler-axis rotation noise
    (degrees, composed onto the rotation); the delay is untouched
    """
    if trans_range < 0 or rot_range < 0:
        raise InputError("perturbation ranges must be non-negative")
    rng = np.random.default_rng(seed)
    translation = gt.translation + rng.uniform(-trans_range, trans_range, size=3)
    angles = rng.uniform(-rot_range, rot_range, size=3)
    if rot_range == 0:
        return CalibrationParams(gt.axis_angle, translation, gt.delay)
    noise = Rotation.from_euler("XYZ", angles, degrees=True).as_matrix()
    return CalibrationParams.from_transform(RigidTransform(noise @ gt.rotation, translation), gt.delay)


def make_two_view_correspondences(config: SceneConfig, pose_delta: RigidTransform, n_points: int = 100,
                                  outlier_fraction: float = 0.0, seed: Optional[int] = None) -> TwoViewSample:
    """
    Pixel pairs of shared 3D points seen from two camera poses (x2 = R x1 + t)

    round(outlier_fraction * n_points) second-view pixels are replaced by
    random pixels at least OUTLIER_MIN_ERROR_PX off the true epipolar line.

    Raises:
        TooFewVisible: fewer than 8 points visible in both views
    """
    if not 0 <= outlier_fraction < 1:
        raise InputError(f"outlier_fraction must be in [0, 1), got {outlier_fraction}")
    if outlier_fraction > 0 and not np.any(pose_delta.translation):
        raise InputError("outliers need a pose with nonzero translation")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    intrinsics = config.intrinsics

    candidates = n_points * 4
    scene = np.column_stack([
        rng.uniform(*config.lateral_range, size=candidates),
        rng.uniform(-2.0, GROUND_HEIGHT, size=candidates),
        rng.uniform(*config.depth_range, size=candidates),
    ])
    uv1, valid1 = project_points(scene, np.eye(3), np.zeros(3), intrinsics)
    uv2, valid2 = project_points(scene, pose_delta.rotation, pose_delta.translation, intrinsics)

    def inside(uv, valid):
        ok = valid.copy()
        ok[valid] = ((uv[valid, 0] >= 0) & (uv[valid, 0] < intrinsics.width)
                     & (uv[valid, 1] >= 0) & (uv[valid, 1] < intrinsics.height))
        return ok

    keep = np.flatnonzero(inside(uv1, valid1) & inside(uv2, valid2))[:n_points]
    if len(keep) < 8:
        raise TooFewVisible(f"{len(keep)} points visible in both views, at least 8 required")
    first = uv1[keep]
    second = uv2[keep].copy()

    outliers = np.zeros(len(keep), dtype=bool)
    n_outliers = int(np.floor(outlier_fraction * len(keep) + 0.5))
    if n_outliers:
        essential = essential_from_pose(pose_delta.rotation, pose_delta.translation)
        for i in np.sort(rng.choice(len(keep), size=n_outliers, replace=False)):
            while True:
                pixel = rng.uniform([0, 0], [intrinsics.width - 1, intrinsics.height - 1])
                error = sampson_distance_px(essential, first[i:i + 1], pixel[None, :], intrinsics)[0]
                if error >= OUTLIER_MIN_ERROR_PX:
                    break
            second[i] = pixel
            outliers[i] = True

    return TwoViewSample(FeatureCorrespondences(first, second), pose_delta, outliers)


def write_scene(bundles: Sequence[SceneBundle], out_dir, frame_dt: float = 0.1,
                correspondences: Optional[Dict[int, FeatureCorrespondences]] = None) -> Dict[str, Path]:
    """
    Write a scene in the tool's file formats

    Produces per-frame cloud CSV and mask PGM, intrinsics.txt, velocity.csv,
    frames.txt (velocity manifest), gt.json and, when correspondences are
    given, per-frame correspondence CSVs with frames_corr.txt.
    """
    if not bundles:
        raise InputError("no bundles to write")
    out_dir = ensure_directory(out_dir)
    written: Dict[str, Path] = {}
    manifest_lines = []
    corr_lines = []
    for bundle in bundles:
        stem = f"frame_{bundle.frame_id:03d}"
        cloud_name, mask_name = f"{stem}.csv", f"{stem}.pgm"
        save_point_cloud_csv(bundle.cloud, out_dir / cloud_name)
        save_mask_pgm(bundle.mask, out_dir / mask_name)
        manifest_lines.append(f"{cloud_name},{mask_name},vel:velocity.csv")
        if correspondences and bundle.frame_id in correspondences:
            corr_name = f"{stem}_corr.csv"
            save_correspondences_csv(correspondences[bundle.frame_id], out_dir / corr_name)
            corr_lines.append(f"{cloud_name},{mask_name},corr:{corr_name}")

    first = bundles[0]
    written["intrinsics"] = save_intrinsics(first.intrinsics, out_dir / "intrinsics.txt")
    written["velocity"] = save_velocity_csv(
        [VelocityEstimate(b.velocity, SUPPLIED_VECTOR, frame_dt, b.frame_id) for b in bundles],
        out_dir / "velocity.csv")
    written["manifest"] = out_dir / "frames.txt"
    written["manifest"].write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    if corr_lines:
        written["corr_manifest"] = out_dir / "frames_corr.txt"
        written["corr_manifest"].write_text("\n".join(corr_lines) + "\n", encoding="utf-8")

    gt = first.gt
    gt_doc = {
        "axis_angle_rad": [float(x) for x in gt.axis_angle],
        "translation_m": [float(x) for x in gt.translation],
        "quaternion_wxyz": [float(x) for x in gt.quaternion()],
        "delay_s": float(gt.delay),
        "velocity_mps": {str(b.frame_id): [float(x) for x in b.velocity] for b in bundles},
    }
    written["gt"] = out_dir / "gt.json"
    written["gt"].write_text(json.dumps(gt_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(bundles)} synthetic frame(s) to {out_dir}")
    return written
