"""
Two-stage calibrator: static extrinsic calibration, then joint
extrinsic + time-delay calibration
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.calibration.config import OptimizerConfig, default_joint_config, default_static_config
from src.calibration.objective import (
    FrameBundle, central_differences, epsilon_vector, gauss_newton_step, linearize, objective_terms,
    residual_jacobian,
)
from src.geometry.transforms import CalibrationParams
from src.utils.errors import AllFramesDegenerate, EvaluationFailed, MissingVelocity
from src.utils.performance_monitor import PerformanceMonitor, timed_call


class CalibrationStatus(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    FAILED = "Failed"


ZERO_EXCITATION = "zero excitation"


@dataclass(frozen=True)
class TraceEntry:
    """State after one iteration (or the initial state for a refused run)"""

    iteration: int
    w: float
    loss: float
    params: CalibrationParams
    accepted: bool
    step_scale: float = 0.0


@dataclass
class CalibrationResult:
    params: CalibrationParams
    final_loss: float
    trace: List[TraceEntry]
    status: CalibrationStatus
    failure_reason: Optional[str] = None
    matched_elements: int = 0
    frames_used: List[int] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def failed(self) -> bool:
        return self.status == CalibrationStatus.FAILED

    def to_dict(self) -> Dict:
        """Machine-readable summary; the trace is reduced to per-iteration losses"""
        return {
            "axis_angle_rad": [float(x) for x in self.params.axis_angle],
            "translation_m": [float(x) for x in self.params.translation],
            "quaternion_wxyz": [float(x) for x in self.params.quaternion()],
            "delay_s": float(self.params.delay),
            "status": self.status.value,
            "failure_reason": self.failure_reason,
            "final_loss": float(self.final_loss),
            "iterations": self.iterations,
            "matched_elements": int(self.matched_elements),
            "frames_used": list(self.frames_used),
            "trace": [{"iteration": e.iteration, "w": e.w, "loss": e.loss,
                       "accepted": e.accepted} for e in self.trace],
        }


def _finite(value: float) -> bool:
    return value is not None and math.isfinite(value)


def detect_failure(result: CalibrationResult, config: OptimizerConfig) -> Tuple[CalibrationStatus, Optional[str]]:
    """
    Classify a finished run

    Failed when any traced value is non-finite or the final loss per matched
    element exceeds failure_loss_threshold. Otherwise Converged when the loss
    is zero, the last line search found no decrease, or the loss changed by
    at most convergence_tolerance (relative) over the last three iterations
    at a constant w; MaxIterations otherwise.

    Returns:
        (status, failure reason or None)
    """
    for entry in result.trace:
        if not _finite(entry.loss) or not np.all(np.isfinite(entry.params.to_vector(7))):
            return CalibrationStatus.FAILED, "non-finite value in trace"
    if not _finite(result.final_loss):
        return CalibrationStatus.FAILED, "non-finite final loss"

    per_element = result.final_loss / result.matched_elements if result.matched_elements else math.inf
    if per_element > config.failure_loss_threshold:
        return CalibrationStatus.FAILED, (f"loss per matched element {per_element:.4g} px^2 exceeds "
                                          f"{config.failure_loss_threshold:g}")

    if result.final_loss == 0 or (result.trace and not result.trace[-1].accepted):
        return CalibrationStatus.CONVERGED, None
    window = result.trace[-4:]
    if len(window) == 4 and len({e.w for e in window}) == 1:
        start = window[0].loss
        change = (start - window[-1].loss) / start if start > 0 else 0.0
        if change <= config.convergence_tolerance:
            return CalibrationStatus.CONVERGED, None
    return CalibrationStatus.MAX_ITERATIONS, None


def select_stationary_frames(velocities: Sequence, speed_threshold: float = 0.1) -> List[int]:
    """Indices of frames whose speed is below speed_threshold (m/s)"""
    return [i for i, v in enumerate(velocities)
            if v is not None and float(np.linalg.norm(v)) < speed_threshold]


class Calibrator:
    """
    Damped Gauss-Newton over the scheduled objective with a strict-decrease
    line search, falling back to a curvature-scaled gradient step
    """

    def __init__(self, config: OptimizerConfig, monitor: Optional[PerformanceMonitor] = None):
        self.config = config
        self.monitor = monitor or PerformanceMonitor()
        self.logger = logging.getLogger(__name__)

    def _usable_bundles(self, frame_bundles: Sequence[FrameBundle]) -> List[FrameBundle]:
        usable = []
        reasons = []
        for bundle in frame_bundles:
            if bundle.degenerate:
                self.logger.warning(f"Skipping frame {bundle.frame_id}: {bundle.degenerate_reason}")
                reasons.append(bundle.degenerate_reason)
            else:
                usable.append(bundle)
        if not usable:
            raise AllFramesDegenerate(reasons or ["no frames"])
        return usable

    def _drop_failing(self, bundles: List[FrameBundle], params: CalibrationParams,
                      static_params: Optional[CalibrationParams]) -> List[FrameBundle]:
        """Remove frames whose objective cannot be evaluated at the initial guess"""
        kept = []
        reasons = []
        for bundle in bundles:
            try:
                objective_terms(params, [bundle], static_params, self.config, 0.0)
                kept.append(bundle)
            except EvaluationFailed as e:
                self.logger.warning(f"Skipping frame {bundle.frame_id}: {e.reason}")
                reasons.append(e.reason)
        if not kept:
            raise AllFramesDegenerate(reasons)
        return kept

    def calibrate_static(self, frame_bundles: Sequence[FrameBundle], init: CalibrationParams) -> CalibrationResult:
        """Rotation + translation with delay fixed at 0 and velocity ignored"""
        bundles = self._drop_failing(self._usable_bundles(frame_bundles), init.with_delay(0.0), None)
        self.logger.info(f"Static calibration over {len(bundles)} frame(s), "
                         f"{self.config.total_iterations} iterations")
        return self._optimize(bundles, init.with_delay(0.0), None, dims=6)

    def calibrate_joint(self, frame_bundles: Sequence[FrameBundle], static_result,
                        init_delay: float = 0.0) -> CalibrationResult:
        """
        Rotation, translation and delay, regularized toward the static estimate

        static_result is a CalibrationResult or CalibrationParams; it is both
        the initial guess and the regularization anchor.
        """
        anchor = static_result.params if isinstance(static_result, CalibrationResult) else static_result
        anchor = anchor.with_delay(0.0)
        init = anchor.with_delay(init_delay)

        for bundle in frame_bundles:
            if bundle.velocity is None:
                raise MissingVelocity(bundle.frame_id)
        bundles = self._usable_bundles(frame_bundles)

        mean_speed = float(np.mean([np.linalg.norm(b.velocity) for b in bundles]))
        if mean_speed < self.config.min_excitation_speed:
            self.logger.warning(f"Mean speed {mean_speed:.3f} m/s below "
                                f"{self.config.min_excitation_speed} m/s: delay is unidentifiable")
            return self._refuse(bundles, init, anchor, ZERO_EXCITATION)

        bundles = self._drop_failing(bundles, init, anchor)
        dims = 7 if self.config.estimate_delay else 6
        self.logger.info(f"Joint calibration over {len(bundles)} frame(s), mean speed {mean_speed:.2f} m/s, "
                         f"{self.config.total_iterations} iterations, delay "
                         f"{'estimated' if dims == 7 else 'held'} from {init_delay:.4f} s")
        return self._optimize(bundles, init, anchor, dims=dims)

    def _refuse(self, bundles, init, anchor, reason: str) -> CalibrationResult:
        w = self.config.weight_at(0)
        try:
            loss, matched = objective_terms(init, bundles, anchor, self.config, w)
        except EvaluationFailed:
            loss, matched = math.inf, 0
        trace = [TraceEntry(0, w, loss, init, accepted=False)]
        return CalibrationResult(init, loss, trace, CalibrationStatus.FAILED, reason, matched,
                                 [b.frame_id for b in bundles])

    def _optimize(self, bundles: List[FrameBundle], init: CalibrationParams,
                  static_params: Optional[CalibrationParams], dims: int) -> CalibrationResult:
        config = self.config
        steps = epsilon_vector(config, dims)
        caps = np.array([config.max_step_rot] * 3 + [config.max_step_trans] * 3 + [config.max_step_delay])[:dims]
        fixed_delay = init.delay

        def evaluate(vector: np.ndarray, w: float) -> Tuple[float, int]:
            candidate = CalibrationParams.from_vector(vector, delay=fixed_delay)
            try:
                return timed_call(self.monitor, objective_terms, candidate, bundles, static_params, config, w)
            except EvaluationFailed as e:
                self.logger.debug(f"Trial rejected: {e}")
                return math.inf, 0

        x = init.to_vector(dims)
        params = init
        trace: List[TraceEntry] = []
        current_w = None
        current_loss = math.inf
        matched = 0

        pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
        with (pool if pool is not None else nullcontext()):
            for iteration in range(config.total_iterations):
                with self.monitor.time_iteration(iteration):
                    w = config.weight_at(iteration)
                    if w != current_w:
                        current_w = w
                        current_loss, matched = evaluate(x, w)

                    found = None
                    if current_loss > 0 and np.isfinite(current_loss):
                        direction = self._gauss_newton_direction(bundles, params, static_params, w, dims, caps, pool)
                        found = self._line_search(lambda v: evaluate(v, w), x, direction, current_loss)
                        if found is None:
                            plus, minus = central_differences(lambda v: evaluate(v, w)[0], x, steps, pool)
                            direction = self._step_direction(plus, minus, current_loss, steps, caps)
                            found = self._line_search(lambda v: evaluate(v, w), x, direction, current_loss)

                    accepted = found is not None
                    alpha = 0.0
                    if accepted:
                        alpha, trial, current_loss, matched = found
                        x = CalibrationParams.from_vector(trial, delay=fixed_delay).to_vector(dims)
                        params = CalibrationParams.from_vector(x, delay=fixed_delay)

                    trace.append(TraceEntry(iteration, w, current_loss, params, accepted, alpha))
                    self.logger.debug(f"Iteration {iteration}: w={w:g} loss={current_loss:.6g} "
                                      f"{'step ' + format(alpha, 'g') if accepted else 'no decrease'}")

        result = CalibrationResult(params, current_loss, trace, CalibrationStatus.MAX_ITERATIONS,
                                   matched_elements=matched, frames_used=[b.frame_id for b in bundles])
        result.status, result.failure_reason = detect_failure(result, config)
        self.logger.info(f"Calibration finished: {result.status.value}, loss {result.final_loss:.6g} "
                         f"after {result.iterations} iterations"
                         + (f" ({result.failure_reason})" if result.failure_reason else ""))
        self.logger.debug(f"Performance: {self.monitor.get_performance_report()}")
        return result

    def _gauss_newton_direction(self, bundles: List[FrameBundle], params: CalibrationParams,
                                static_params: Optional[CalibrationParams], w: float, dims: int,
                                caps: np.ndarray, pool) -> np.ndarray:
        """Damped Gauss-Newton step on the frozen correspondences, shrunk uniformly to the caps"""
        try:
            linearization = linearize(params, bundles, static_params, self.config, w)
        except EvaluationFailed as e:
            self.logger.debug(f"No linearization: {e}")
            return np.zeros(dims)
        residuals, jacobian = residual_jacobian(linearization, params, self.config, dims, pool)
        direction = gauss_newton_step(residuals, jacobian, self.config.damping)
        ratio = float(np.max(np.abs(direction) / caps))
        if ratio > 1:
            direction = direction / ratio
        return direction

    def _line_search(self, evaluate: Callable[[np.ndarray], Tuple[float, int]], x: np.ndarray,
                     direction: np.ndarray, current_loss: float):
        """
        Strict-decrease search along direction

        Backtracks from initial_step until the loss drops. When the first
        trial already drops it, the step keeps growing by 1 / backtrack_factor
        for as long as the loss keeps dropping.

        Returns:
            (step scale, vector, loss, matched elements) of the best trial, or None
        """
        config = self.config
        if not np.any(direction != 0):
            return None
        alpha = config.initial_step
        best = None
        for attempt in range(config.max_backtracks + 1):
            trial = x + alpha * direction
            loss, matched = evaluate(trial)
            if loss < current_loss:
                best = (alpha, trial, loss, matched)
                break
            alpha *= config.backtrack_factor
        if best is None or attempt > 0:
            return best
        for _ in range(config.max_expansions):
            alpha /= config.backtrack_factor
            trial = x + alpha * direction
            loss, matched = evaluate(trial)
            if not loss < best[2]:
                break
            best = (alpha, trial, loss, matched)
        return best

    @staticmethod
    def _step_direction(plus: np.ndarray, minus: np.ndarray, current: float,
                        steps: np.ndarray, caps: np.ndarray) -> np.ndarray:
        """
        Gradient step scaled by the diagonal second differences, used when
        the Gauss-Newton step finds no decrease

        Curvature is floored at |g| / cap so every component stays within its
        cap; a non-finite difference zeroes that component.
        """
        gradient = (plus - minus) / (2.0 * steps)
        curvature = (plus - 2.0 * current + minus) / (steps * steps)
        direction = np.zeros_like(gradient)
        usable = np.isfinite(gradient) & np.isfinite(curvature) & (gradient != 0)
        scale = np.maximum(curvature[usable], np.abs(gradient[usable]) / caps[usable])
        direction[usable] = -gradient[usable] / scale
        return direction


def calibrate_static(frame_bundles: Sequence[FrameBundle], init: CalibrationParams,
                     config: Optional[OptimizerConfig] = None,
                     monitor: Optional[PerformanceMonitor] = None) -> CalibrationResult:
    return Calibrator(config or default_static_config(), monitor).calibrate_static(frame_bundles, init)


def calibrate_joint(frame_bundles: Sequence[FrameBundle], static_result, init_delay: float = 0.0,
                    config: Optional[OptimizerConfig] = None,
                    monitor: Optional[PerformanceMonitor] = None) -> CalibrationResult:
    return Calibrator(config or default_joint_config(), monitor).calibrate_joint(
        frame_bundles, static_result, init_delay)
