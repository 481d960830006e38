"""
Essential matrix estimation and relative pose recovery

Normalized 8-point solver inside RANSAC with truncated Sampson scoring in
pixels; OpenCV decomposes E and triangulates, cheirality picks the pose.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import cv2
import numpy as np

from src.data.semantic_io import FeatureCorrespondences
from src.geometry.camera import CameraIntrinsics
from src.utils.errors import CheiralityAmbiguous, DegenerateConfiguration, InsufficientCorrespondences

logger = logging.getLogger(__name__)

MIN_CORRESPONDENCES = 8
# Samples whose linear system has a second null direction are skipped
DEGENERACY_RATIO = 1e-8
# Refit and re-classify rounds after the sampling loop
MAX_REFITS = 10


@dataclass(frozen=True)
class RansacSettings:
    iterations: int = 500
    inlier_threshold_px: float = 1.0
    seed: int = 0

    @classmethod
    def from_config(cls, section: Optional[Dict]) -> "RansacSettings":
        """Build from the settings.json "odometry" section"""
        section = section or {}
        return cls(int(section.get("ransac_iterations", cls.iterations)),
                   float(section.get("inlier_threshold_px", cls.inlier_threshold_px)),
                   int(section.get("ransac_seed", cls.seed)))


@dataclass(frozen=True)
class EssentialMatrix:
    matrix: np.ndarray

    @property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)


@dataclass(frozen=True)
class RelativePose:
    """x2 = R x1 + t between the older (1) and newer (2) camera frames"""

    rotation: np.ndarray
    translation_direction: np.ndarray
    inlier_count: int
    inlier_ratio: float
    cheirality_margin: float = 0.0


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def to_homogeneous(points: np.ndarray) -> np.ndarray:
    return np.hstack([points, np.ones((len(points), 1))])


def normalize_image_points(pixels: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pixels to normalized camera coordinates (K^-1 applied)"""
    return (to_homogeneous(pixels) @ intrinsics.inverse_matrix.T)[:, :2]


def hartley_normalize(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Isotropic normalization: zero centroid, mean distance sqrt(2)

    Returns:
        (normalized points, 3x3 similarity T with normalized = T * point)
    """
    points = np.asarray(points, dtype=np.float64)
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    scale = np.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    transform = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    return (points - centroid) * scale, transform


def enforce_essential_constraints(matrix: np.ndarray) -> np.ndarray:
    """Project onto the essential manifold: singular values (1, 1, 0)"""
    u, _, vt = np.linalg.svd(matrix)
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt


def eight_point_essential(x1: np.ndarray, x2: np.ndarray) -> Tuple[Optional[np.ndarray], float]:
    """
    Linear essential matrix from >= 8 normalized-coordinate pairs

    Returns:
        (E or None when the sample is degenerate, sigma_8 / sigma_1 of the system)
    """
    n1, t1 = hartley_normalize(x1)
    n2, t2 = hartley_normalize(x2)
    a = np.column_stack([
        n2[:, 0] * n1[:, 0], n2[:, 0] * n1[:, 1], n2[:, 0],
        n2[:, 1] * n1[:, 0], n2[:, 1] * n1[:, 1], n2[:, 1],
        n1[:, 0], n1[:, 1], np.ones(len(n1)),
    ])
    _, s, vt = np.linalg.svd(a)
    ratio = float(s[7] / s[0]) if s[0] > 0 else 0.0
    if ratio < DEGENERACY_RATIO:
        return None, ratio
    e_normalized = vt[-1].reshape(3, 3)
    matrix = enforce_essential_constraints(t2.T @ e_normalized @ t1)
    return matrix, ratio


def fundamental_from_essential(essential: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    k_inv = intrinsics.inverse_matrix
    return k_inv.T @ essential @ k_inv


def sampson_distance_px(essential: np.ndarray, first: np.ndarray, second: np.ndarray,
                        intrinsics: CameraIntrinsics) -> np.ndarray:
    """First-order geometric epipolar error of each pixel pair, in pixels"""
    f = fundamental_from_essential(essential, intrinsics)
    p1 = to_homogeneous(np.asarray(first, dtype=np.float64))
    p2 = to_homogeneous(np.asarray(second, dtype=np.float64))
    fp1 = p1 @ f.T
    ftp2 = p2 @ f
    algebraic = np.sum(p2 * fp1, axis=1)
    denominator = fp1[:, 0] ** 2 + fp1[:, 1] ** 2 + ftp2[:, 0] ** 2 + ftp2[:, 1] ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        distance = np.abs(algebraic) / np.sqrt(denominator)
    return np.where(denominator > 0, distance, np.where(algebraic == 0, 0.0, np.inf))


def essential_from_pose(rotation, translation) -> np.ndarray:
    """E = [t]x R for x2 = R x1 + t"""
    return skew(translation) @ np.asarray(rotation, dtype=np.float64)


def triangulate_points(rotation: np.ndarray, translation: np.ndarray,
                       x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Triangulation in the first camera's frame from normalized coordinates"""
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([rotation, np.asarray(translation, dtype=np.float64).reshape(3, 1)])
    homogeneous = cv2.triangulatePoints(p1, p2, np.ascontiguousarray(x1.T, dtype=np.float64),
                                        np.ascontiguousarray(x2.T, dtype=np.float64))
    with np.errstate(divide='ignore', invalid='ignore'):
        return (homogeneous[:3] / homogeneous[3]).T


def pose_candidates(essential: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """The four (R, t) pairs consistent with E, t of unit length"""
    r1, r2, t = cv2.decomposeEssentialMat(np.ascontiguousarray(essential, dtype=np.float64))
    t = t.reshape(3)
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def truncated_cost(distances: np.ndarray, threshold: float) -> float:
    """Sum of squared distances, each capped at threshold^2"""
    return float(np.sum(np.minimum(distances * distances, threshold * threshold)))


def estimate_essential_ransac(correspondences: FeatureCorrespondences, intrinsics: CameraIntrinsics,
                              settings: Optional[RansacSettings] = None) -> Tuple[EssentialMatrix, np.ndarray]:
    """
    Robust essential matrix from pixel correspondences

    Each trial solves the normalized 8-point system on a seeded sample and
    scores all pairs by truncated squared Sampson distance; the lowest cost
    wins, the earliest trial on ties. The winner is then refit on its
    inliers and re-classified until the inlier set stops changing, keeping
    a refit only when it does not raise the cost.

    Raises:
        InsufficientCorrespondences: fewer than 8 pairs
        DegenerateConfiguration: no model with at least 8 inliers
    """
    settings = settings or RansacSettings()
    n = len(correspondences)
    if n < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondences(n, MIN_CORRESPONDENCES)
    correspondences.check_within(intrinsics.width, intrinsics.height)

    first, second = correspondences.first, correspondences.second
    x1 = normalize_image_points(first, intrinsics)
    x2 = normalize_image_points(second, intrinsics)
    threshold = settings.inlier_threshold_px

    def score(matrix: np.ndarray) -> Tuple[float, np.ndarray]:
        distances = sampson_distance_px(matrix, first, second, intrinsics)
        return truncated_cost(distances, threshold), distances < threshold

    rng = np.random.default_rng(settings.seed)
    best_matrix = None
    best_inliers = np.zeros(n, dtype=bool)
    best_cost = np.inf
    skipped = 0
    for _ in range(settings.iterations):
        sample = rng.choice(n, size=MIN_CORRESPONDENCES, replace=False)
        matrix, _ = eight_point_essential(x1[sample], x2[sample])
        if matrix is None:
            skipped += 1
            continue
        cost, inliers = score(matrix)
        if cost < best_cost:
            best_matrix, best_inliers, best_cost = matrix, inliers, cost

    best_count = int(best_inliers.sum())
    if best_count < MIN_CORRESPONDENCES:
        raise DegenerateConfiguration(f"best model has {best_count} inliers "
                                      f"({skipped} of {settings.iterations} samples degenerate)")

    for _ in range(MAX_REFITS):
        refit, _ = eight_point_essential(x1[best_inliers], x2[best_inliers])
        if refit is None:
            break
        cost, inliers = score(refit)
        if cost > best_cost or int(inliers.sum()) < MIN_CORRESPONDENCES:
            break
        stable = np.array_equal(inliers, best_inliers)
        best_matrix, best_inliers, best_cost = refit, inliers, cost
        if stable:
            break

    logger.debug(f"RANSAC: {int(best_inliers.sum())}/{n} inliers, cost {best_cost:.4g}, "
                 f"{skipped} degenerate samples skipped")
    return EssentialMatrix(best_matrix), best_inliers


def decompose_essential(essential, correspondences: FeatureCorrespondences, inlier_mask,
                        intrinsics: CameraIntrinsics) -> RelativePose:
    """
    Pick the (R, t) candidate placing most inliers in front of both cameras

    Raises:
        CheiralityAmbiguous: the best two candidates tie
    """
    matrix = essential.matrix if isinstance(essential, EssentialMatrix) else np.asarray(essential)
    inlier_mask = np.asarray(inlier_mask, dtype=bool)
    inlier_count = int(inlier_mask.sum())
    if inlier_count < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondences(inlier_count, MIN_CORRESPONDENCES)

    x1 = normalize_image_points(correspondences.first[inlier_mask], intrinsics)
    x2 = normalize_image_points(correspondences.second[inlier_mask], intrinsics)

    scored = []
    for rotation, translation in pose_candidates(matrix):
        points = triangulate_points(rotation, translation, x1, x2)
        depth1 = points[:, 2]
        depth2 = points @ rotation[2] + translation[2]
        positive = int(np.sum((depth1 > 0) & (depth2 > 0)))
        scored.append((positive, rotation, translation))

    ranked = sorted(scored, key=lambda item: item[0], reverse=True)
    best, runner_up = ranked[0], ranked[1]
    if best[0] == runner_up[0]:
        raise CheiralityAmbiguous(f"cheirality tie: {best[0]} points in front for two candidates")

    direction = best[2] / np.linalg.norm(best[2])
    margin = (best[0] - runner_up[0]) / inlier_count
    logger.debug(f"Pose decomposition: {best[0]}/{inlier_count} points in front, margin {margin:.2f}")
    return RelativePose(best[1], direction, inlier_count, inlier_count / len(correspondences), margin)
