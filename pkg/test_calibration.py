"""
Calibration Tests
Optimizer configuration, objective evaluation and the two calibration stages
"""

import math
import os
import sys
import tempfile
import unittest
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from src.alignment.losses import alignment_terms, project_cloud
from src.calibration.calibrator import (
    ZERO_EXCITATION, CalibrationResult, CalibrationStatus, Calibrator, TraceEntry, calibrate_joint,
    calibrate_static, detect_failure, select_stationary_frames,
)
from src.calibration.config import (
    OptimizerConfig, WeightSchedule, default_joint_config, default_static_config,
    load_optimizer_config, save_optimizer_config,
)
from src.calibration.objective import (
    FrameBundle, evaluate_objective, finite_difference_gradient, gauss_newton_step, linearize, regularization,
    residual_jacobian,
)
from src.data.semantic_io import SemanticMask
from src.geometry.transforms import CalibrationParams
from src.synth.scene_generator import SceneConfig, generate_scene, perturb_params
from src.utils.errors import AllFramesDegenerate, InputError, MissingVelocity, ParseError
from src.utils.performance_monitor import PerformanceMonitor


def scene_bundle(config: OptimizerConfig, scene_config: SceneConfig = None, frame_id: int = 0,
                 with_velocity: bool = True) -> FrameBundle:
    scene_config = scene_config or SceneConfig(seed=3)
    scene = generate_scene(scene_config, frame_id)
    return FrameBundle.prepare(scene.cloud, scene.mask, scene.intrinsics, scene_config.mask_class_id, config,
                               velocity=scene.velocity if with_velocity else None, frame_id=frame_id,
                               cloud_class_id=scene_config.cloud_class_id)


def short_config(schedule: str = "3:1", **changes) -> OptimizerConfig:
    return default_static_config().with_overrides(schedule=WeightSchedule.parse(schedule), **changes)


class TestWeightSchedule(unittest.TestCase):

    def test_static_defaults(self):
        """20 iterations at w=20, 30 at w=1, 10 at w=0.02, 2% sampling"""
        config = default_static_config()
        self.assertEqual(config.total_iterations, 60)
        self.assertEqual([config.weight_at(i) for i in (0, 19, 20, 49, 50, 59)],
                         [20.0, 20.0, 1.0, 1.0, 0.02, 0.02])
        self.assertEqual(config.sample_rate, 0.02)

    def test_joint_defaults(self):
        """Constant w=5 for 20 iterations with lambda1=1e6, lambda2=1e9"""
        config = default_joint_config()
        self.assertEqual(config.total_iterations, 20)
        self.assertEqual(config.weight_at(19), 5.0)
        self.assertEqual((config.lambda1, config.lambda2), (1e6, 1e9))

    def test_beyond_schedule(self):
        """Iterations past the schedule are rejected"""
        with self.assertRaises(InputError):
            default_static_config().weight_at(60)

    def test_parse_and_format(self):
        """count:weight text round-trips"""
        schedule = WeightSchedule.parse("20:20, 30:1,10:0.02")
        self.assertEqual(schedule.segments, ((20, 20.0), (30, 1.0), (10, 0.02)))
        self.assertEqual(WeightSchedule.parse(schedule.format()), schedule)

    def test_invalid_segments(self):
        """Non-positive weights or counts and malformed text are rejected"""
        for text in ("20:0", "0:1", "abc", "5:x", ""):
            with self.assertRaises(InputError):
                WeightSchedule.parse(text)


class TestOptimizerConfigFile(unittest.TestCase):

    def test_overrides(self):
        """key=value lines override the base config"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "opt.txt"
            path.write_text("schedule=5:2\nlambda1=10\nuse_pixel_to_point=false\nmax_backtracks=3\n")
            config = load_optimizer_config(path)
        self.assertEqual(config.total_iterations, 5)
        self.assertEqual(config.lambda1, 10.0)
        self.assertFalse(config.use_pixel_to_point)
        self.assertEqual(config.max_backtracks, 3)
        self.assertEqual(config.fd_epsilon_trans, 1e-3)

    def test_round_trip(self):
        """A saved config loads back equal"""
        with tempfile.TemporaryDirectory() as tmp:
            path = save_optimizer_config(default_joint_config(), Path(tmp) / "opt.txt")
            self.assertEqual(load_optimizer_config(path), default_joint_config())

    def test_unknown_and_invalid_keys(self):
        """Unknown keys and unparsable values are positioned parse errors"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "opt.txt"
            path.write_text("lambda1=1\nlearning_rate=3\n")
            with self.assertRaises(ParseError) as ctx:
                load_optimizer_config(path)
            self.assertEqual(ctx.exception.line, 2)
            path.write_text("max_backtracks=many\n")
            with self.assertRaises(ParseError):
                load_optimizer_config(path)

    def test_field_validation(self):
        """Out-of-range settings are rejected on construction"""
        with self.assertRaises(InputError):
            default_static_config().with_overrides(backtrack_factor=1.0)
        with self.assertRaises(InputError):
            default_static_config().with_overrides(sample_rate=0.0)
        with self.assertRaises(InputError):
            default_static_config().with_overrides(damping=-1.0)
        with self.assertRaises(InputError):
            default_static_config().with_overrides(max_expansions=-1)


class TestObjective(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.config = default_static_config()
        cls.scene_config = SceneConfig(seed=3)
        cls.bundle = scene_bundle(cls.config, cls.scene_config)
        cls.gt = cls.scene_config.gt_params

    def test_zero_at_ground_truth(self):
        """The point-to-pixel loss vanishes at the ground truth of a synthetic scene"""
        self.assertEqual(evaluate_objective(self.gt, self.bundle, None, self.config, 0.0), 0.0)

    def test_perturbed_is_not_better(self):
        """Perturbed parameters never beat the ground truth at w = 0"""
        for seed in range(5):
            perturbed = perturb_params(self.gt, 0.05, 1.0, seed)
            self.assertGreater(evaluate_objective(perturbed, self.bundle, None, self.config, 0.0), 0.0)

    def test_composition(self):
        """The objective is projection, then both losses, then the weighted sum"""
        params = perturb_params(self.gt, 0.03, 0.5, 1)
        projected = project_cloud(self.bundle.cloud, params, None, self.bundle.intrinsics)
        terms = alignment_terms(projected, self.bundle.index, self.bundle.sampled)
        self.assertEqual(evaluate_objective(params, self.bundle, None, self.config, 20.0), terms.combined(20.0))

    def test_weight_increases_loss(self):
        """A larger w gives a larger objective when pixels are unmatched"""
        params = perturb_params(self.gt, 0.05, 1.0, 2)
        self.assertLess(evaluate_objective(params, self.bundle, None, self.config, 1.0),
                        evaluate_objective(params, self.bundle, None, self.config, 2.0))

    def test_static_ignores_velocity_and_delay(self):
        """Static evaluation uses zero velocity and zero delay"""
        moving = self.bundle.with_velocity([3.0, 0.0, 8.0])
        params = perturb_params(self.gt, 0.02, 0.3, 4)
        expected = evaluate_objective(params, self.bundle, None, self.config, 1.0)
        self.assertEqual(evaluate_objective(params.with_delay(0.3), moving, None, self.config, 1.0), expected)

    def test_frames_sum(self):
        """Two copies of a frame double the objective"""
        params = perturb_params(self.gt, 0.02, 0.3, 5)
        single = evaluate_objective(params, self.bundle, None, self.config, 1.0)
        self.assertEqual(evaluate_objective(params, [self.bundle, self.bundle], None, self.config, 1.0),
                         single + single)

    def test_pixel_to_point_switch(self):
        """Disabling the pixel-to-point term reduces the objective to the point-to-pixel loss"""
        params = perturb_params(self.gt, 0.03, 0.5, 6)
        config = self.config.with_overrides(use_pixel_to_point=False)
        self.assertEqual(evaluate_objective(params, self.bundle, None, config, 20.0),
                         evaluate_objective(params, self.bundle, None, self.config, 0.0))

    def test_prepare_checks_mask_size(self):
        """A mask that does not match the intrinsics is rejected"""
        with self.assertRaises(InputError):
            FrameBundle.prepare(self.bundle.cloud, SemanticMask(np.ones((10, 10), dtype=np.uint8)),
                                self.bundle.intrinsics, 1, self.config)

    def test_prepare_filters_cloud_class(self):
        """Background labels are dropped when a cloud class is given"""
        scene_config = SceneConfig(seed=3, n_background_points=50)
        bundle = scene_bundle(self.config, scene_config)
        self.assertEqual(len(bundle.cloud), scene_config.n_clusters * scene_config.points_per_cluster)
        self.assertTrue(np.all(bundle.cloud.labels == scene_config.cloud_class_id))

    def test_missing_class_is_degenerate(self):
        """A mask without the class yields a degenerate bundle"""
        bundle = FrameBundle.prepare(self.bundle.cloud, self.bundle.mask, self.bundle.intrinsics, 99, self.config)
        self.assertTrue(bundle.degenerate)
        self.assertIn("class absent", bundle.degenerate_reason)


class TestRegularization(unittest.TestCase):

    def test_zero_at_anchor(self):
        """No penalty at the static estimate"""
        params = CalibrationParams([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])
        self.assertEqual(regularization(params, params, 1e6, 1e9), 0.0)

    def test_small_rotation_still_penalized(self):
        """A 1e-6 rad rotation offset is not swallowed by the exact-anchor case"""
        anchor = CalibrationParams([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])
        params = CalibrationParams([0.1 + 1e-6, 0.2, 0.3], [1.0, 2.0, 3.0])
        self.assertAlmostEqual(regularization(params, anchor, 0.0, 1e9), 2e-3, delta=2e-4)

    def test_translation_term(self):
        """1 mm offset with lambda1 = 1e6 costs 1"""
        anchor = CalibrationParams([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        params = CalibrationParams([0.0, 0.0, 0.0], [0.001, 0.0, 0.0])
        self.assertAlmostEqual(regularization(params, anchor, 1e6, 0.0), 1.0, places=9)

    def test_rotation_term(self):
        """A rotation by theta costs lambda2 * (2 sqrt(2) sin(theta / 2))^2"""
        anchor = CalibrationParams([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        for theta in (0.05, 0.5, 1.0):
            params = CalibrationParams([theta, 0.0, 0.0], [0.0, 0.0, 0.0])
            expected = 1e9 * (2.0 * math.sqrt(2.0) * math.sin(theta / 2.0)) ** 2
            self.assertAlmostEqual(regularization(params, anchor, 0.0, 1e9) / expected, 1.0, places=9)


class TestFiniteDifferences(unittest.TestCase):

    def test_quadratic(self):
        """Central differences recover 2x for |x|^2"""
        params = CalibrationParams([0.1, -0.2, 0.3], [1.0, -2.0, 0.5])
        gradient = finite_difference_gradient(params, [], None, default_static_config(), 1.0, 6,
                                              objective=lambda x: float(x @ x))
        np.testing.assert_allclose(gradient, 2.0 * params.to_vector(6), atol=1e-6)

    def test_constant(self):
        """A locally constant objective has a zero gradient"""
        params = CalibrationParams([0.1, 0.0, 0.0], [0.0, 0.0, 1.0], 0.05)
        gradient = finite_difference_gradient(params, [], None, default_static_config(), 1.0, 7,
                                              objective=lambda x: 3.0)
        np.testing.assert_array_equal(gradient, np.zeros(7))

    def test_executor_does_not_change_result(self):
        """Parallel evaluation returns the same gradient"""
        config = default_static_config()
        scene_config = SceneConfig(seed=3)
        bundle = scene_bundle(config, scene_config)
        params = perturb_params(scene_config.gt_params, 0.03, 0.5, 7)
        serial = finite_difference_gradient(params, bundle, None, config, 1.0, 6)
        with ThreadPoolExecutor(max_workers=3) as pool:
            parallel = finite_difference_gradient(params, bundle, None, config, 1.0, 6, executor=pool)
        np.testing.assert_array_equal(serial, parallel)


class TestGaussNewton(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.scene_config = SceneConfig(seed=3)
        cls.gt = cls.scene_config.gt_params

    def test_linear_least_squares(self):
        """Undamped, the step solves a linear least-squares problem exactly"""
        rng = np.random.default_rng(4)
        a = rng.normal(size=(20, 3)) * np.array([1.0, 100.0, 0.01])
        x_true = np.array([0.3, -0.002, 40.0])
        step = gauss_newton_step(-(a @ x_true), a, 0.0)
        np.testing.assert_allclose(step, x_true, rtol=1e-9)

    def test_unused_parameter_and_bad_rows(self):
        """A parameter the residuals ignore stays put and non-finite rows are dropped"""
        jacobian = np.array([[1.0, 0.0], [2.0, 0.0], [np.nan, 0.0], [1.0, 0.0]])
        residuals = np.array([-1.0, -2.0, 5.0, np.inf])
        step = gauss_newton_step(residuals, jacobian, 0.0)
        np.testing.assert_allclose(step, [1.0, 0.0], atol=1e-12)
        np.testing.assert_array_equal(gauss_newton_step(residuals, np.zeros((4, 2)), 1e-3), [0.0, 0.0])

    def test_residuals_match_static_objective(self):
        """Squared residuals sum to the objective at the linearization point"""
        config = default_static_config()
        bundle = scene_bundle(config, self.scene_config)
        params = perturb_params(self.gt, 0.03, 0.5, 7)
        expected = evaluate_objective(params, bundle, None, config, 1.0)
        residuals = linearize(params, [bundle], None, config, 1.0).residuals(params)
        self.assertGreater(expected, 0.0)
        self.assertAlmostEqual(float(residuals @ residuals) / expected, 1.0, places=9)

    def test_residuals_match_joint_objective(self):
        """Delay, velocity and regularization enter the residuals as they enter the objective"""
        scene_config = SceneConfig(seed=5, gt_delay=0.1, gt_velocity=(0.0, 0.0, 8.0))
        config = default_joint_config()
        bundle = scene_bundle(config, scene_config)
        anchor = scene_config.gt_params.with_delay(0.0)
        params = perturb_params(anchor, 0.002, 0.01, 8).with_delay(0.05)
        expected = evaluate_objective(params, bundle, anchor, config, 5.0)
        residuals = linearize(params, [bundle], anchor, config, 5.0).residuals(params)
        self.assertAlmostEqual(float(residuals @ residuals) / expected, 1.0, places=9)

    def test_jacobian_predicts_residuals(self):
        """A small parameter change moves the residuals along the Jacobian"""
        config = default_static_config()
        bundle = scene_bundle(config, self.scene_config)
        params = perturb_params(self.gt, 0.03, 0.5, 9)
        linearization = linearize(params, [bundle], None, config, 1.0)
        residuals, jacobian = residual_jacobian(linearization, params, config, 6)
        delta = np.array([1e-5, -2e-5, 1e-5, 1e-4, -1e-4, 2e-4])
        moved = CalibrationParams.from_vector(params.to_vector(6) + delta)
        np.testing.assert_allclose(linearization.residuals(moved), residuals + jacobian @ delta, atol=1e-3)

    def test_line_search_expands(self):
        """A first trial that already helps is enlarged while the loss keeps dropping"""
        calibrator = Calibrator(short_config())
        found = calibrator._line_search(lambda v: (float((v[0] - 10.0) ** 2), 1),
                                        np.zeros(1), np.array([1.0]), 100.0)
        self.assertEqual(found[0], 8.0)
        self.assertEqual(found[2], 4.0)

    def test_line_search_backtracks(self):
        """An overshooting direction is halved until the loss drops"""
        calibrator = Calibrator(short_config())
        objective = lambda v: (float((v[0] - 10.0) ** 2), 1)
        found = calibrator._line_search(objective, np.zeros(1), np.array([100.0]), 100.0)
        self.assertEqual(found[0], 0.125)
        self.assertEqual(found[2], 6.25)
        self.assertIsNone(calibrator._line_search(objective, np.zeros(1), np.array([-1.0]), 100.0))
        self.assertIsNone(calibrator._line_search(objective, np.zeros(1), np.zeros(1), 100.0))

    def test_short_run_reduces_loss(self):
        """A few iterations from a perturbed start remove most of the misalignment"""
        config = short_config("8:1", use_pixel_to_point=False)
        bundle = scene_bundle(config, self.scene_config)
        init = perturb_params(self.gt, 0.03, 0.5, 10)
        start = evaluate_objective(init, bundle, None, config, 1.0)
        result = calibrate_static([bundle], init, config)
        self.assertLess(result.final_loss, 0.5 * start)


class TestDetectFailure(unittest.TestCase):

    def setUp(self):
        self.config = default_static_config()
        self.params = CalibrationParams([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])

    def result(self, losses, final=None, matched=100, accepted=True, w=1.0):
        trace = [TraceEntry(i, w, loss, self.params, accepted) for i, loss in enumerate(losses)]
        final = losses[-1] if final is None else final
        return CalibrationResult(self.params, final, trace, CalibrationStatus.MAX_ITERATIONS,
                                 matched_elements=matched)

    def test_zero_loss_converged(self):
        """A zero final loss is convergence"""
        self.assertEqual(detect_failure(self.result([5.0, 0.0]), self.config)[0], CalibrationStatus.CONVERGED)

    def test_non_finite(self):
        """A NaN anywhere in the trace is failure"""
        status, reason = detect_failure(self.result([5.0, float("nan"), 1.0]), self.config)
        self.assertEqual(status, CalibrationStatus.FAILED)
        self.assertIn("non-finite", reason)

    def test_loss_per_element(self):
        """More than 50 px^2 per matched element is failure"""
        status, _ = detect_failure(self.result([1e6, 6000.0], matched=100), self.config)
        self.assertEqual(status, CalibrationStatus.FAILED)
        status, _ = detect_failure(self.result([1e6, 4000.0], matched=100), self.config)
        self.assertNotEqual(status, CalibrationStatus.FAILED)

    def test_plateau_converged(self):
        """A flat tail at constant w is convergence"""
        losses = [100.0, 50.0, 40.0, 39.9999, 39.9998, 39.9997]
        self.assertEqual(detect_failure(self.result(losses), self.config)[0], CalibrationStatus.CONVERGED)

    def test_still_improving(self):
        """A decreasing tail is MaxIterations"""
        losses = [100.0, 80.0, 60.0, 40.0, 20.0]
        self.assertEqual(detect_failure(self.result(losses), self.config)[0], CalibrationStatus.MAX_ITERATIONS)

    def test_no_decrease_converged(self):
        """A final iteration that found no decrease is convergence"""
        result = self.result([100.0, 80.0, 60.0, 40.0], accepted=False)
        self.assertEqual(detect_failure(result, self.config)[0], CalibrationStatus.CONVERGED)


class TestStaticCalibration(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.scene_config = SceneConfig(seed=3)
        cls.gt = cls.scene_config.gt_params

    def test_stays_at_ground_truth(self):
        """Starting at the ground truth of a clean scene, the estimate does not move"""
        config = short_config("5:1", use_pixel_to_point=False)
        result = calibrate_static([scene_bundle(config, self.scene_config)], self.gt, config)
        np.testing.assert_array_equal(result.params.to_vector(7), self.gt.to_vector(7))
        self.assertEqual(result.final_loss, 0.0)
        self.assertEqual(result.status, CalibrationStatus.CONVERGED)
        self.assertEqual(len(result.trace), 5)

    def test_losses_never_increase_at_constant_weight(self):
        """Accepted steps only ever lower the loss"""
        config = short_config("8:1", use_pixel_to_point=False)
        bundle = scene_bundle(config, self.scene_config)
        init = perturb_params(self.gt, 0.05, 1.0, 11)
        result = calibrate_static([bundle], init, config)
        losses = [entry.loss for entry in result.trace]
        self.assertTrue(all(b <= a for a, b in zip(losses, losses[1:])))
        self.assertLessEqual(result.final_loss, evaluate_objective(init, bundle, None, config, 1.0))

    def test_trace_follows_schedule(self):
        """Each trace entry records the scheduled w"""
        config = short_config("2:20,2:1,1:0.02")
        result = calibrate_static([scene_bundle(config, self.scene_config)],
                                  perturb_params(self.gt, 0.03, 0.5, 12), config)
        self.assertEqual([entry.w for entry in result.trace], [20.0, 20.0, 1.0, 1.0, 0.02])
        self.assertEqual(result.params.delay, 0.0)

    def test_deterministic_across_workers(self):
        """Serial and threaded runs produce identical traces"""
        init = perturb_params(self.gt, 0.03, 0.5, 13)
        serial_config = short_config("3:20")
        threaded_config = serial_config.with_overrides(workers=3)
        bundle = scene_bundle(serial_config, self.scene_config)
        serial = calibrate_static([bundle], init, serial_config)
        threaded = calibrate_static([bundle], init, threaded_config)
        self.assertEqual([e.loss for e in serial.trace], [e.loss for e in threaded.trace])
        np.testing.assert_array_equal(serial.params.to_vector(7), threaded.params.to_vector(7))

    def test_all_frames_degenerate(self):
        """Frames whose mask lacks the class cannot be calibrated"""
        config = short_config()
        scene = generate_scene(self.scene_config)
        bundle = FrameBundle.prepare(scene.cloud, scene.mask, scene.intrinsics, 99, config)
        with self.assertRaises(AllFramesDegenerate) as ctx:
            calibrate_static([bundle], self.gt, config)
        self.assertIn("class absent", str(ctx.exception))

    def test_degenerate_frame_is_skipped(self):
        """A degenerate frame is left out and the rest are used"""
        config = short_config("2:1")
        good = scene_bundle(config, self.scene_config, frame_id=0)
        scene = generate_scene(self.scene_config, 1)
        bad = FrameBundle.prepare(scene.cloud, scene.mask, scene.intrinsics, 99, config, frame_id=1)
        result = calibrate_static([good, bad], self.gt, config)
        self.assertEqual(result.frames_used, [0])

    def test_monitor_records_evaluations(self):
        """The performance monitor sees every iteration"""
        config = short_config("2:1")
        monitor = PerformanceMonitor()
        Calibrator(config, monitor).calibrate_static([scene_bundle(config, self.scene_config)], self.gt)
        report = monitor.get_performance_report()
        self.assertEqual(report["iterations"], 2)
        self.assertGreater(report["evaluations"], 0)

    def test_result_dict(self):
        """The summary carries the quaternion, delay and status"""
        config = short_config("1:1")
        result = calibrate_static([scene_bundle(config, self.scene_config)], self.gt, config)
        summary = result.to_dict()
        self.assertEqual(summary["status"], result.status.value)
        self.assertEqual(len(summary["quaternion_wxyz"]), 4)
        self.assertEqual(summary["delay_s"], 0.0)
        self.assertEqual(summary["iterations"], 1)

    def test_stationary_frame_selection(self):
        """Frames slower than the threshold are selected"""
        velocities = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], None, [0.05, 0.0, 0.0]]
        self.assertEqual(select_stationary_frames(velocities), [0, 3])


class TestJointCalibration(unittest.TestCase):

    def test_stays_at_ground_truth(self):
        """Extrinsics and delay stay put when started at the ground truth"""
        scene_config = SceneConfig(seed=5, gt_delay=0.1, gt_velocity=(0.0, 0.0, 8.0))
        config = default_joint_config().with_overrides(schedule=WeightSchedule.parse("4:5"),
                                                       use_pixel_to_point=False)
        gt = scene_config.gt_params
        bundle = scene_bundle(config, scene_config)
        result = calibrate_joint([bundle], gt.with_delay(0.0), init_delay=0.1, config=config)
        np.testing.assert_allclose(result.params.to_vector(6), gt.to_vector(6), atol=1e-12)
        self.assertAlmostEqual(result.params.delay, 0.1, places=12)
        self.assertLess(result.final_loss, 1e-12)

    def test_agrees_with_static_when_delay_is_held(self):
        """A stiff prior and a held zero delay keep the joint estimate on the static one"""
        scene_config = SceneConfig(seed=6, gt_velocity=(0.0, 0.0, 8.0))
        config = default_joint_config().with_overrides(schedule=WeightSchedule.parse("3:5"),
                                                       lambda1=1e18, lambda2=1e18, estimate_delay=False)
        gt = scene_config.gt_params
        result = calibrate_joint([scene_bundle(config, scene_config)], gt, init_delay=0.0, config=config)
        np.testing.assert_allclose(result.params.to_vector(7), gt.with_delay(0.0).to_vector(7), atol=1e-9)

    def test_zero_excitation(self):
        """Without motion the delay is not estimated"""
        config = default_joint_config()
        scene_config = SceneConfig(seed=3)
        gt = scene_config.gt_params
        result = calibrate_joint([scene_bundle(config, scene_config)], gt, init_delay=0.05, config=config)
        self.assertEqual(result.status, CalibrationStatus.FAILED)
        self.assertEqual(result.failure_reason, ZERO_EXCITATION)
        self.assertEqual(len(result.trace), 1)
        self.assertEqual(result.params.delay, 0.05)

    def test_missing_velocity(self):
        """A frame without velocity is rejected"""
        config = default_joint_config()
        scene_config = SceneConfig(seed=3)
        bundle = scene_bundle(config, scene_config, with_velocity=False)
        with self.assertRaises(MissingVelocity):
            calibrate_joint([bundle], scene_config.gt_params, config=config)

    def test_accepts_static_result(self):
        """A static CalibrationResult serves as anchor and initial guess"""
        scene_config = SceneConfig(seed=5, gt_delay=0.1, gt_velocity=(0.0, 0.0, 8.0))
        config = default_joint_config().with_overrides(schedule=WeightSchedule.parse("1:5"))
        gt = scene_config.gt_params
        static = CalibrationResult(gt.with_delay(0.0), 0.0, [], CalibrationStatus.CONVERGED)
        result = calibrate_joint([scene_bundle(config, scene_config)], static, init_delay=0.1, config=config)
        self.assertEqual(len(result.trace), 1)


if __name__ == '__main__':
    unittest.main()
