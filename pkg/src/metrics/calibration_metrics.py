"""
Calibration error metrics against ground truth

Rotation errors in degrees, translation in centimetres, delay in
milliseconds. Euler angles are intrinsic x-y-z (roll, pitch, yaw).
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.geometry.transforms import CalibrationParams, check_rotation, euler_xyz, matrix_to_quaternion

logger = logging.getLogger(__name__)

GIMBAL_LOCK_MARGIN_DEG = 0.5

METRIC_KEYS = ("qad_deg", "aead_deg", "atd_cm", "delay_error_ms")


def qad(r_gt, r_est) -> float:
    """
    Quaternion angle difference 2 * acos(|p . q|), degrees

    Evaluated as 4 * atan2(|p - q|, |p + q|) with q sign-aligned to p, which
    is the same angle without acos losing precision near zero.
    """
    p = matrix_to_quaternion(r_gt)
    q = matrix_to_quaternion(r_est)
    if np.dot(p, q) < 0:
        q = -q
    half = np.arctan2(np.linalg.norm(p - q), np.linalg.norm(p + q))
    return float(np.degrees(4.0 * half))


def near_gimbal_lock(rotation) -> bool:
    pitch = np.degrees(euler_xyz(rotation)[1])
    return bool(abs(abs(pitch) - 90.0) <= GIMBAL_LOCK_MARGIN_DEG)


def _wrapped_difference_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Absolute angle differences folded into [0, 180]"""
    return np.abs((np.degrees(a - b) + 180.0) % 360.0 - 180.0)


def aead(r_gt, r_est) -> float:
    """Mean absolute roll / pitch / yaw difference, degrees"""
    r_gt = check_rotation(r_gt)
    r_est = check_rotation(r_est)
    if near_gimbal_lock(r_gt) or near_gimbal_lock(r_est):
        logger.warning("Euler extraction within 0.5 deg of gimbal lock; AEAD is unreliable")
    return float(np.mean(_wrapped_difference_deg(euler_xyz(r_gt), euler_xyz(r_est))))


def atd(t_gt, t_est) -> float:
    """Mean absolute per-axis translation difference, centimetres"""
    diff = np.asarray(t_gt, dtype=np.float64) - np.asarray(t_est, dtype=np.float64)
    return float(np.mean(np.abs(diff)) * 100.0)


def delay_error(delta_gt: float, delta_est: float) -> float:
    """|delta_gt - delta_est| in milliseconds"""
    return abs(float(delta_gt) - float(delta_est)) * 1000.0


@dataclass(frozen=True)
class CalibrationError:
    qad: float
    aead: float
    atd: float
    delay_error: Optional[float] = None
    gimbal_lock: bool = False
    label: str = ""

    def to_dict(self) -> Dict:
        return {
            "qad_deg": self.qad,
            "aead_deg": self.aead,
            "atd_cm": self.atd,
            "delay_error_ms": self.delay_error,
            "gimbal_lock": bool(self.gimbal_lock),
        }


def evaluate_calibration(gt: CalibrationParams, est: CalibrationParams, include_delay: bool = True,
                         label: str = "") -> CalibrationError:
    r_gt, r_est = gt.rotation, est.rotation
    return CalibrationError(
        qad=qad(r_gt, r_est),
        aead=aead(r_gt, r_est),
        atd=atd(gt.translation, est.translation),
        delay_error=delay_error(gt.delay, est.delay) if include_delay else None,
        gimbal_lock=near_gimbal_lock(r_gt) or near_gimbal_lock(r_est),
        label=label,
    )


def aggregate_errors(errors: Sequence[CalibrationError]) -> Dict[str, Dict[str, Optional[float]]]:
    """Mean and median of every metric; delay over the entries that carry one"""
    columns = {
        "qad_deg": [e.qad for e in errors],
        "aead_deg": [e.aead for e in errors],
        "atd_cm": [e.atd for e in errors],
        "delay_error_ms": [e.delay_error for e in errors if e.delay_error is not None],
    }
    summary = {}
    for key, values in columns.items():
        if values:
            summary[key] = {"mean": float(np.mean(values)), "median": float(np.median(values))}
        else:
            summary[key] = {"mean": None, "median": None}
    return summary


def _text_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return f"{value:.6f}"


def format_report_text(errors: Sequence[CalibrationError]) -> str:
    """Flat key=value block: one group per run, then the aggregate"""
    lines: List[str] = []
    for i, error in enumerate(errors):
        prefix = error.label or f"run{i}"
        for key, value in error.to_dict().items():
            lines.append(f"{prefix}.{key}={_text_value(value)}")
    for key, stats in aggregate_errors(errors).items():
        for stat, value in stats.items():
            lines.append(f"{stat}.{key}={_text_value(value)}")
    return "\n".join(lines) + "\n"


def report_to_json(errors: Sequence[CalibrationError]) -> str:
    report = {
        "runs": [dict(error.to_dict(), label=error.label or f"run{i}") for i, error in enumerate(errors)],
        "aggregate": aggregate_errors(errors),
    }
    return json.dumps(report, indent=2, sort_keys=True)
