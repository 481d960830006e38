"""
Metrics Tests
Rotation, translation and delay errors against ground truth
"""

import json
import math
import os
import sys
import unittest
import warnings

import numpy as np
from scipy.spatial.transform import Rotation

sys.path.insert(0, os.path.dirname(__file__))

from src.geometry.transforms import CalibrationParams, rotation_angle
from src.metrics.calibration_metrics import (
    CalibrationError, aead, aggregate_errors, atd, delay_error, evaluate_calibration,
    format_report_text, near_gimbal_lock, qad, report_to_json,
)


def euler_oracle(matrix) -> np.ndarray:
    """Intrinsic x-y-z angles read directly off R = Rx(a) Ry(b) Rz(c)"""
    a = math.atan2(-matrix[1, 2], matrix[2, 2])
    b = math.asin(max(-1.0, min(1.0, matrix[0, 2])))
    c = math.atan2(-matrix[0, 1], matrix[0, 0])
    return np.array([a, b, c])


class TestRotationMetrics(unittest.TestCase):

    def test_identical_rotations(self):
        """Identical rotations have zero QAD and AEAD"""
        matrix = Rotation.from_euler("XYZ", [10, 20, 30], degrees=True).as_matrix()
        self.assertEqual(qad(matrix, matrix), 0.0)
        self.assertEqual(aead(matrix, matrix), 0.0)

    def test_half_turn(self):
        """A 180 degree rotation has QAD 180"""
        self.assertAlmostEqual(qad(np.eye(3), np.diag([1.0, -1.0, -1.0])), 180.0, places=9)

    def test_ten_degrees(self):
        """A 10 degree relative rotation has QAD 10"""
        gt = Rotation.from_euler("XYZ", [5, -3, 40], degrees=True).as_matrix()
        est = gt @ Rotation.from_euler("z", 10, degrees=True).as_matrix()
        self.assertAlmostEqual(qad(gt, est), 10.0, places=9)

    def test_qad_is_relative_angle(self):
        """QAD equals the geodesic angle of A B^T for random pairs"""
        first = Rotation.random(1000, random_state=1).as_matrix()
        second = Rotation.random(1000, random_state=2).as_matrix()
        for a, b in zip(first, second):
            expected = math.degrees(rotation_angle(a @ b.T))
            self.assertAlmostEqual(qad(a, b), expected, delta=1e-9)

    def test_yaw_only(self):
        """A 3 degree yaw difference averages to 1 degree"""
        gt = Rotation.from_euler("XYZ", [0, 0, 0], degrees=True).as_matrix()
        est = Rotation.from_euler("XYZ", [0, 0, 3], degrees=True).as_matrix()
        self.assertAlmostEqual(aead(gt, est), 1.0, places=9)

    def test_wrap_around(self):
        """Yaw of 179 against -179 degrees differs by 2, not 358"""
        gt = Rotation.from_euler("XYZ", [0, 0, 179], degrees=True).as_matrix()
        est = Rotation.from_euler("XYZ", [0, 0, -179], degrees=True).as_matrix()
        self.assertAlmostEqual(aead(gt, est), 2.0 / 3.0, places=9)

    def test_aead_against_direct_extraction(self):
        """AEAD agrees with angles read off the matrix entries"""
        rng = np.random.default_rng(4)
        for _ in range(200):
            angles_a = rng.uniform([-180, -80, -180], [180, 80, 180])
            angles_b = rng.uniform([-180, -80, -180], [180, 80, 180])
            a = Rotation.from_euler("XYZ", angles_a, degrees=True).as_matrix()
            b = Rotation.from_euler("XYZ", angles_b, degrees=True).as_matrix()
            diff = np.degrees(euler_oracle(a) - euler_oracle(b))
            expected = float(np.mean(np.abs((diff + 180.0) % 360.0 - 180.0)))
            self.assertAlmostEqual(aead(a, b), expected, delta=1e-9)

    def test_gimbal_lock_flag(self):
        """Pitch at 90 degrees is flagged and warned about"""
        locked = Rotation.from_euler("XYZ", [0, 90, 0], degrees=True).as_matrix()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.assertTrue(near_gimbal_lock(locked))
            self.assertFalse(near_gimbal_lock(np.eye(3)))
            with self.assertLogs("src.metrics.calibration_metrics", level="WARNING"):
                aead(np.eye(3), locked)


class TestTranslationAndDelay(unittest.TestCase):

    def test_single_axis(self):
        """3 cm on one axis averages to 1 cm"""
        self.assertAlmostEqual(atd([0.0, 0.0, 0.0], [0.03, 0.0, 0.0]), 1.0, places=9)

    def test_three_axes(self):
        """Offsets of 1, 2 and 3 cm average to 2 cm"""
        self.assertAlmostEqual(atd([0.0, 0.0, 0.0], [0.01, 0.02, 0.03]), 2.0, places=9)

    def test_delay_error(self):
        """Delay error is in milliseconds"""
        self.assertAlmostEqual(delay_error(0.1, 0.1034), 3.4, places=9)
        self.assertAlmostEqual(delay_error(0.1, 0.0865), 13.5, places=9)
        self.assertEqual(delay_error(0.1, 0.1), 0.0)


class TestReports(unittest.TestCase):

    def setUp(self):
        self.gt = CalibrationParams([0.1, 0.2, 0.3], [0.0, -0.08, -0.27], 0.1)

    def test_evaluate_identical(self):
        """Evaluating the ground truth against itself gives zeros"""
        error = evaluate_calibration(self.gt, self.gt)
        self.assertEqual((error.qad, error.aead, error.atd, error.delay_error), (0.0, 0.0, 0.0, 0.0))

    def test_evaluate_without_delay(self):
        """Static results carry no delay error"""
        self.assertIsNone(evaluate_calibration(self.gt, self.gt.with_delay(0.0), include_delay=False).delay_error)

    def test_aggregate(self):
        """Mean and median over runs; the median of two is their midpoint"""
        errors = [CalibrationError(1.0, 2.0, 3.0, 4.0), CalibrationError(3.0, 4.0, 5.0, None)]
        summary = aggregate_errors(errors)
        self.assertEqual(summary["qad_deg"], {"mean": 2.0, "median": 2.0})
        self.assertEqual(summary["atd_cm"]["median"], 4.0)
        self.assertEqual(summary["delay_error_ms"], {"mean": 4.0, "median": 4.0})

    def test_text_report(self):
        """Text report lists each run then the aggregate"""
        text = format_report_text([CalibrationError(1.0, 2.0, 3.0, None, label="a")])
        self.assertIn("a.qad_deg=1.000000", text)
        self.assertIn("a.delay_error_ms=none", text)
        self.assertIn("mean.atd_cm=3.000000", text)
        self.assertTrue(text.endswith("\n"))

    def test_json_report(self):
        """JSON report has runs and aggregate sections"""
        report = json.loads(report_to_json([CalibrationError(1.0, 2.0, 3.0, 4.0)]))
        self.assertEqual(report["runs"][0]["label"], "run0")
        self.assertEqual(report["runs"][0]["atd_cm"], 3.0)
        self.assertEqual(report["aggregate"]["delay_error_ms"]["mean"], 4.0)

    def test_json_report_from_evaluation(self):
        """Evaluated errors serialize, gimbal flag included, and the text form prints it as a word"""
        error = evaluate_calibration(self.gt, self.gt)
        self.assertIs(type(error.gimbal_lock), bool)
        report = json.loads(report_to_json([error]))
        self.assertIs(report["runs"][0]["gimbal_lock"], False)
        self.assertEqual(report["runs"][0]["qad_deg"], 0.0)
        self.assertIn("run0.gimbal_lock=false", format_report_text([error]))


if __name__ == '__main__':
    unittest.main()
