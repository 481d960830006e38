"""
Per-frame calibration inputs and the objective the optimizer minimizes
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.alignment.feature_transform import NearestPixelIndex, build_nearest_pixel_index
from src.alignment.losses import (
    LossTerms, SampledPixels, alignment_terms, downsample_pixels, match_pixels_to_points, point_to_pixel_matches,
    project_cloud,
)
from src.calibration.config import OptimizerConfig
from src.data.semantic_io import SemanticMask, SemanticPointCloud, filter_by_class
from src.geometry.camera import CameraIntrinsics, delayed_translation, project_points
from src.geometry.transforms import CalibrationParams
from src.utils.errors import (
    ClassAbsent, EmptyProjection, EvaluationFailed, InputError, MissingVelocity,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameBundle:
    """
    One frame's calibration inputs with its nearest-pixel index and frozen
    pixel sample, built once and reused by every objective evaluation

    A degenerate bundle (class missing from the mask or the cloud) carries
    the reason instead of an index and is skipped by the optimizer.
    """

    frame_id: int
    cloud: SemanticPointCloud
    mask: SemanticMask
    intrinsics: CameraIntrinsics
    mask_class_id: int
    index: Optional[NearestPixelIndex] = None
    sampled: Optional[SampledPixels] = None
    velocity: Optional[np.ndarray] = None
    degenerate_reason: Optional[str] = None

    @property
    def degenerate(self) -> bool:
        return self.degenerate_reason is not None

    @classmethod
    def prepare(cls, cloud: SemanticPointCloud, mask: SemanticMask, intrinsics: CameraIntrinsics,
                mask_class_id: int, config: OptimizerConfig, velocity=None, frame_id: int = 0,
                cloud_class_id: Optional[int] = None) -> "FrameBundle":
        """
        Build the bundle for one frame

        Args:
            cloud: LIDAR scan; filtered to cloud_class_id when one is given
            mask: segmentation mask of the matching camera image
            velocity: camera-frame velocity (m/s), needed by the joint stage
            cloud_class_id: LIDAR label to keep, or None for a pre-filtered cloud
        """
        if mask.width != intrinsics.width or mask.height != intrinsics.height:
            raise InputError(f"frame {frame_id}: mask is {mask.width}x{mask.height}, "
                             f"intrinsics expect {intrinsics.width}x{intrinsics.height}")
        if cloud_class_id is not None:
            cloud = filter_by_class(cloud, cloud_class_id)
        if velocity is not None:
            velocity = np.array(velocity, dtype=np.float64).reshape(3)
            velocity.setflags(write=False)

        if len(cloud) == 0:
            return cls(frame_id, cloud, mask, intrinsics, mask_class_id, velocity=velocity,
                       degenerate_reason="class absent: no cloud points of the class")
        try:
            index = build_nearest_pixel_index(mask, mask_class_id)
            sampled = downsample_pixels(mask, mask_class_id, config.sample_rate,
                                        config.sample_seed + frame_id)
        except ClassAbsent as e:
            return cls(frame_id, cloud, mask, intrinsics, mask_class_id, velocity=velocity,
                       degenerate_reason=str(e))
        logger.debug(f"Prepared frame {frame_id}: {len(cloud)} points, {sampled.count} of "
                     f"{sampled.total} class pixels sampled")
        return cls(frame_id, cloud, mask, intrinsics, mask_class_id, index, sampled, velocity)

    def with_velocity(self, velocity) -> "FrameBundle":
        velocity = np.array(velocity, dtype=np.float64).reshape(3)
        velocity.setflags(write=False)
        return FrameBundle(self.frame_id, self.cloud, self.mask, self.intrinsics, self.mask_class_id,
                           self.index, self.sampled, velocity, self.degenerate_reason)


def _as_list(frame_bundle) -> List[FrameBundle]:
    if isinstance(frame_bundle, FrameBundle):
        return [frame_bundle]
    return list(frame_bundle)


def regularization(params: CalibrationParams, static_params: CalibrationParams,
                   lambda1: float, lambda2: float) -> float:
    """lambda1 * |t - t_static|^2 + lambda2 * |R R_static^-1 - I|_F^2"""
    dt = params.translation - static_params.translation
    penalty = lambda1 * np.dot(dt, dt)
    # Equal axis-angle vectors contribute exactly zero
    if not np.array_equal(params.axis_angle, static_params.axis_angle):
        residual = params.rotation @ static_params.rotation.T - np.eye(3)
        penalty += lambda2 * np.sum(residual * residual)
    return float(penalty)


def frame_terms(params: CalibrationParams, bundle: FrameBundle, joint: bool,
                with_pixel_to_point: bool = True) -> LossTerms:
    """
    Both alignment losses for one frame

    The static stage projects with zero velocity and zero delay; the joint
    stage uses the bundle's velocity and params.delay.
    """
    if bundle.degenerate:
        raise EvaluationFailed(bundle.frame_id, bundle.degenerate_reason)
    if joint:
        if bundle.velocity is None:
            raise MissingVelocity(bundle.frame_id)
        projected = project_cloud(bundle.cloud, params, bundle.velocity, bundle.intrinsics)
    else:
        projected = project_cloud(bundle.cloud, params.with_delay(0.0), None, bundle.intrinsics)
    try:
        return alignment_terms(projected, bundle.index, bundle.sampled, with_pixel_to_point)
    except EmptyProjection as e:
        raise EvaluationFailed(bundle.frame_id, str(e)) from None


def objective_terms(params: CalibrationParams, frame_bundle, static_params: Optional[CalibrationParams],
                    config: OptimizerConfig, w: float) -> Tuple[float, int]:
    """
    Objective value and the number of matched elements it was summed over

    Frame terms are added in bundle order; regularization is added once.
    """
    joint = static_params is not None
    use_i2p = config.use_pixel_to_point and w != 0
    weight = w if config.use_pixel_to_point else 0.0
    total = 0.0
    matched = 0
    for bundle in _as_list(frame_bundle):
        terms = frame_terms(params, bundle, joint, use_i2p)
        total += terms.combined(weight)
        matched += terms.matched_elements
    if joint:
        total += regularization(params, static_params, config.lambda1, config.lambda2)
    return total, matched


def evaluate_objective(params: CalibrationParams, frame_bundle: Union[FrameBundle, Sequence[FrameBundle]],
                       static_params: Optional[CalibrationParams], config: OptimizerConfig,
                       w: float) -> float:
    """
    Bidirectional loss summed over frames, plus regularization toward
    static_params when one is given (joint stage)

    Raises:
        EvaluationFailed: a frame projected no point into the image
    """
    total, _ = objective_terms(params, frame_bundle, static_params, config, w)
    return total


def epsilon_vector(config: OptimizerConfig, dims: int) -> np.ndarray:
    steps = [config.fd_epsilon_rot] * 3 + [config.fd_epsilon_trans] * 3
    if dims == 7:
        steps.append(config.fd_epsilon_delay)
    elif dims != 6:
        raise InputError(f"dims must be 6 or 7, got {dims}")
    return np.array(steps)


def vector_objective(params: CalibrationParams, frame_bundle, static_params: Optional[CalibrationParams],
                     config: OptimizerConfig, w: float, dims: int) -> Callable[[np.ndarray], float]:
    """Objective as a function of the packed 6- or 7-vector (delay held at params.delay for 6)"""
    bundles = _as_list(frame_bundle)

    def objective(vector: np.ndarray) -> float:
        candidate = CalibrationParams.from_vector(vector, delay=params.delay)
        return evaluate_objective(candidate, bundles, static_params, config, w)

    return objective


def central_differences(objective: Callable[[np.ndarray], float], x: np.ndarray, steps: np.ndarray,
                        executor: Optional[Executor] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Function values at x + h_i e_i and x - h_i e_i for every dimension,
    scalar or equal-length vectors

    Evaluations run through executor.map when one is given; the order of
    the returned values does not depend on it.
    """
    points = []
    for i, h in enumerate(steps):
        forward = x.copy()
        forward[i] += h
        backward = x.copy()
        backward[i] -= h
        points.extend([forward, backward])
    values = list(executor.map(objective, points)) if executor is not None else [objective(p) for p in points]
    values = np.array(values, dtype=np.float64)
    return values[0::2], values[1::2]


def finite_difference_gradient(params: CalibrationParams, frame_bundle, static_params: Optional[CalibrationParams],
                               config: OptimizerConfig, w: float, dims: int,
                               objective: Optional[Callable[[np.ndarray], float]] = None,
                               executor: Optional[Executor] = None) -> np.ndarray:
    """
    Central-difference gradient over the packed parameter vector

    Args:
        dims: 6 (rotation + translation) or 7 (+ delay)
        objective: replaces the alignment objective, for testing
    """
    steps = epsilon_vector(config, dims)
    if objective is None:
        objective = vector_objective(params, frame_bundle, static_params, config, w, dims)
    plus, minus = central_differences(objective, params.to_vector(dims), steps, executor)
    return (plus - minus) / (2.0 * steps)


def regularization_residuals(params: CalibrationParams, static_params: CalibrationParams,
                             lambda1: float, lambda2: float) -> np.ndarray:
    """Residual vector whose squared norm is the regularization term"""
    dt = params.translation - static_params.translation
    chordal = params.rotation @ static_params.rotation.T - np.eye(3)
    return np.concatenate([np.sqrt(lambda1) * dt, np.sqrt(lambda2) * chordal.ravel()])


@dataclass(frozen=True)
class FrameMatches:
    """
    One frame's correspondences frozen at a linearization point

    Off-class points keep their matched class pixel and sampled pixels keep
    their nearest projected point, so the squared residual norm equals the
    frame's loss at that point and varies smoothly around it.
    """

    bundle: FrameBundle
    joint: bool
    point_rows: np.ndarray
    point_targets: np.ndarray
    pixel_coords: np.ndarray
    pixel_rows: np.ndarray
    pixel_weight: float

    def residuals(self, params: CalibrationParams) -> np.ndarray:
        if self.joint:
            translation = delayed_translation(params.translation, self.bundle.velocity, params.delay)
        else:
            translation = params.translation
        rows = np.concatenate([self.point_rows, self.pixel_rows])
        uv, _ = project_points(self.bundle.cloud.points[rows], params.rotation, translation,
                               self.bundle.intrinsics)
        k = len(self.point_rows)
        to_pixels = uv[:k] - self.point_targets
        to_points = self.pixel_weight * (self.pixel_coords - uv[k:])
        return np.concatenate([to_pixels.ravel(), to_points.ravel()])


def match_frame(params: CalibrationParams, bundle: FrameBundle, joint: bool, weight: float) -> FrameMatches:
    """Freeze one frame's correspondences; weight 0 leaves the pixel-to-point side out"""
    if bundle.degenerate:
        raise EvaluationFailed(bundle.frame_id, bundle.degenerate_reason)
    if joint:
        if bundle.velocity is None:
            raise MissingVelocity(bundle.frame_id)
        projected = project_cloud(bundle.cloud, params, bundle.velocity, bundle.intrinsics)
    else:
        projected = project_cloud(bundle.cloud, params.with_delay(0.0), None, bundle.intrinsics)
    try:
        off, targets = point_to_pixel_matches(projected, bundle.index)
        if weight != 0:
            _, positions = match_pixels_to_points(bundle.sampled, projected)
            pixel_coords = bundle.sampled.pixels.astype(np.float64)
            pixel_rows = projected.source_index[positions]
            pixel_weight = float(np.sqrt(weight * len(projected) / len(bundle.sampled)))
        else:
            pixel_coords = np.empty((0, 2))
            pixel_rows = np.empty(0, dtype=np.int64)
            pixel_weight = 0.0
    except EmptyProjection as e:
        raise EvaluationFailed(bundle.frame_id, str(e)) from None
    return FrameMatches(bundle, joint, projected.source_index[off], targets, pixel_coords, pixel_rows, pixel_weight)


@dataclass(frozen=True)
class Linearization:
    """Frozen correspondences over all frames plus the regularization anchor"""

    frames: Tuple[FrameMatches, ...]
    static_params: Optional[CalibrationParams] = None
    lambda1: float = 0.0
    lambda2: float = 0.0

    def residuals(self, params: CalibrationParams) -> np.ndarray:
        parts = [frame.residuals(params) for frame in self.frames]
        if self.static_params is not None:
            parts.append(regularization_residuals(params, self.static_params, self.lambda1, self.lambda2))
        return np.concatenate(parts)


def linearize(params: CalibrationParams, frame_bundle, static_params: Optional[CalibrationParams],
              config: OptimizerConfig, w: float) -> Linearization:
    """
    Correspondences of every frame at params, weighted as objective_terms weights them

    Raises:
        EvaluationFailed: a frame projected no point into the image
    """
    joint = static_params is not None
    weight = w if config.use_pixel_to_point else 0.0
    frames = tuple(match_frame(params, bundle, joint, weight) for bundle in _as_list(frame_bundle))
    if joint:
        return Linearization(frames, static_params, config.lambda1, config.lambda2)
    return Linearization(frames)


def residual_jacobian(linearization: Linearization, params: CalibrationParams, config: OptimizerConfig,
                      dims: int, executor: Optional[Executor] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Residuals at params and their central-difference Jacobian

    Returns:
        (residuals (m,), jacobian (m, dims)); delay is held at params.delay for dims 6
    """
    steps = epsilon_vector(config, dims)

    def residuals_at(vector: np.ndarray) -> np.ndarray:
        return linearization.residuals(CalibrationParams.from_vector(vector, delay=params.delay))

    plus, minus = central_differences(residuals_at, params.to_vector(dims), steps, executor)
    jacobian = ((plus - minus) / (2.0 * steps[:, None])).T
    return linearization.residuals(params), jacobian


def gauss_newton_step(residuals: np.ndarray, jacobian: np.ndarray, damping: float) -> np.ndarray:
    """
    Damped least-squares step minimizing |r + J dx|^2

    Damping adds damping * diag(J^T J) to the normal matrix, solved as a
    column-normalized stacked least-squares system. Rows with a non-finite
    entry are dropped and parameters the residuals do not depend on get a
    zero step.
    """
    rows = np.isfinite(residuals) & np.all(np.isfinite(jacobian), axis=1)
    r = residuals[rows]
    jac = jacobian[rows]
    step = np.zeros(jacobian.shape[1])
    scale = np.sqrt(np.sum(jac * jac, axis=0))
    active = scale > 0
    if len(r) == 0 or not np.any(active):
        return step
    columns = jac[:, active] / scale[active]
    n = columns.shape[1]
    system = np.vstack([columns, np.sqrt(damping) * np.eye(n)])
    rhs = np.concatenate([-r, np.zeros(n)])
    solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    step[active] = solution / scale[active]
    return step
