"""Static and joint spatio-temporal calibration"""

from src.calibration.config import (
    WeightSchedule, OptimizerConfig, default_static_config, default_joint_config,
    load_optimizer_config, format_optimizer_config, save_optimizer_config,
)
from src.calibration.objective import (
    FrameBundle, regularization, evaluate_objective, objective_terms, finite_difference_gradient,
    linearize, residual_jacobian, gauss_newton_step,
)
from src.calibration.calibrator import (
    Calibrator, CalibrationResult, CalibrationStatus, TraceEntry, ZERO_EXCITATION,
    calibrate_static, calibrate_joint, detect_failure, select_stationary_frames,
)
