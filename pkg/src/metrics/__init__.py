"""Rotation, translation and delay error metrics"""

from src.metrics.calibration_metrics import (
    CalibrationError, qad, aead, atd, delay_error, near_gimbal_lock,
    evaluate_calibration, aggregate_errors, format_report_text, report_to_json,
)
