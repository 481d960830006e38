"""
Command-line interface
synth, calibrate-static, calibrate-joint, eval and render-overlay
"""

import argparse
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from src import __version__
from src.calibration.calibrator import (
    Calibrator, CalibrationResult, ZERO_EXCITATION, select_stationary_frames,
)
from src.calibration.config import (
    OptimizerConfig, default_joint_config, default_static_config, load_optimizer_config,
)
from src.calibration.objective import FrameBundle
from src.cli.overlay import render_overlay
from src.data.semantic_io import (
    FrameEntry, SemanticPointCloud, filter_by_class, load_correspondences_csv, load_frame_manifest,
    load_kitti_bin_with_labels, load_mask_pgm, load_point_cloud_csv,
)
from src.file.output_manager import OutputManager
from src.geometry.camera import CameraIntrinsics, load_intrinsics, load_kitti_calibration
from src.geometry.transforms import CalibrationParams, RigidTransform
from src.integrations.csv_logger import CSVTraceLogger
from src.metrics.calibration_metrics import evaluate_calibration, format_report_text, report_to_json
from src.odometry.essential import RansacSettings
from src.odometry.velocity import estimate_velocity, load_velocity_csv, velocity_for_frame
from src.synth.scene_generator import (
    SceneConfig, generate_scenes, kitti_like_intrinsics, make_two_view_correspondences, write_scene,
)
from src.utils.config_manager import ConfigManager, resolve_workers
from src.utils.errors import DataFileError, FileMissing, InputError, MissingVelocity, SemSyncError
from src.utils.logger import setup_logging
from src.utils.performance_monitor import PerformanceMonitor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNIDENTIFIABLE = 5


@dataclass
class RunManifest:
    """Everything needed to repeat a run; written before any result file"""

    command: str
    inputs: List[str]
    config_path: Optional[str]
    seed: Optional[int]
    output_dir: str
    tool_version: str = __version__
    options: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)


def _float_list(text: str, count: int, name: str) -> List[float]:
    try:
        values = [float(x) for x in text.split(',')]
    except ValueError:
        raise InputError(f"{name} must be {count} comma-separated numbers, got {text!r}") from None
    if len(values) != count or not all(np.isfinite(values)):
        raise InputError(f"{name} must be {count} comma-separated finite numbers, got {text!r}")
    return values


def params_from_json(path) -> CalibrationParams:
    """CalibrationParams from a result.json or gt.json"""
    path = Path(path)
    if not path.is_file():
        raise FileMissing(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return CalibrationParams(doc["axis_angle_rad"], doc["translation_m"], doc.get("delay_s", 0.0))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataFileError(path, f"not a calibration file: {e}") from None


def parse_init(text: str) -> CalibrationParams:
    """A JSON result file, or "tx,ty,tz,rx,ry,rz" (metres, axis-angle radians)"""
    if Path(text).is_file():
        return params_from_json(text)
    values = _float_list(text, 6, "--init")
    return CalibrationParams(values[3:], values[:3], 0.0)


def load_cloud(path) -> SemanticPointCloud:
    """CSV cloud, or a KITTI .bin with its .label file next to it"""
    path = Path(path)
    if path.suffix == ".bin":
        return load_kitti_bin_with_labels(path, path.with_suffix(".label"))
    return load_point_cloud_csv(path)


class CommandContext:
    """Settings, logging and output handling shared by every command"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.settings_manager = ConfigManager(getattr(args, "settings", None))
        self.settings = self.settings_manager.load_config()
        level = args.log_level or self.settings_manager.get_setting("logging.level", self.settings) or "INFO"
        setup_logging(level, bool(self.settings_manager.get_setting("logging.log_to_file", self.settings)))
        self.logger = logging.getLogger(__name__)
        workers = args.workers if args.workers is not None else self.settings_manager.get_setting(
            "runtime.workers", self.settings)
        self.workers = resolve_workers(workers)

    def setting(self, path: str, default=None):
        value = self.settings_manager.get_setting(path, self.settings)
        return default if value is None else value

    def class_ids(self):
        cloud = self.args.class_id_cloud if self.args.class_id_cloud is not None else self.setting("classes.cloud", 10)
        mask = self.args.class_id_mask if self.args.class_id_mask is not None else self.setting("classes.mask", 13)
        return int(cloud), int(mask)

    def optimizer_config(self, base: OptimizerConfig) -> OptimizerConfig:
        config = load_optimizer_config(self.args.config, base) if self.args.config else base
        changes = {"workers": self.workers}
        if getattr(self.args, "seed", None) is not None:
            changes["sample_seed"] = int(self.args.seed)
        return config.with_overrides(**changes)

    def outputs(self, inputs: Sequence) -> OutputManager:
        return OutputManager(self.args.out, inputs)

    def write_manifest(self, outputs: OutputManager, inputs: Sequence, seed=None, **options) -> None:
        manifest = RunManifest(
            command=self.args.command,
            inputs=[str(p) for p in inputs if p is not None],
            config_path=str(self.args.config) if getattr(self.args, "config", None) else None,
            seed=seed,
            output_dir=str(self.args.out),
            options={k: v for k, v in sorted(options.items())},
        )
        outputs.write_json("manifest.json", manifest.to_dict())


def _frame_entries(args) -> List[FrameEntry]:
    if args.frames:
        return load_frame_manifest(args.frames)
    if not (args.cloud and args.mask):
        raise InputError("give --frames or both --cloud and --mask")
    extra_vel = Path(args.velocity) if getattr(args, "velocity", None) else None
    extra_corr = Path(args.correspondences) if getattr(args, "correspondences", None) else None
    return [FrameEntry(Path(args.cloud), Path(args.mask), extra_vel, extra_corr)]


def _intrinsics(args, entries: List[FrameEntry]):
    """Intrinsics and an optional initial transform from --intrinsics or --kitti-calib"""
    if args.kitti_calib:
        first_mask = load_mask_pgm(entries[0].mask_path)
        intrinsics, transform = load_kitti_calibration(args.kitti_calib, first_mask.width, first_mask.height)
        return intrinsics, CalibrationParams.from_transform(transform)
    if not args.intrinsics:
        raise InputError("--intrinsics (or --kitti-calib) is required")
    return load_intrinsics(args.intrinsics), None


def _input_paths(args, entries: List[FrameEntry]) -> List[Path]:
    paths = []
    for entry in entries:
        paths.extend(p for p in (entry.cloud_path, entry.mask_path, entry.velocity_path,
                                 entry.correspondences_path) if p is not None)
    for name in ("frames", "intrinsics", "kitti_calib", "config", "gt", "static_result", "velocity",
                 "correspondences"):
        value = getattr(args, name, None)
        if value:
            paths.append(Path(value))
    init = getattr(args, "init", None)
    if init and Path(init).is_file():
        paths.append(Path(init))
    return list(dict.fromkeys(paths))


def _frame_velocity(ctx: CommandContext, entry: FrameEntry, frame_id: int, intrinsics: CameraIntrinsics,
                    cache: Dict[Path, list]) -> Optional[np.ndarray]:
    args = ctx.args
    if entry.correspondences_path is not None:
        if args.speed is None:
            raise InputError("correspondences need --speed: monocular odometry has no metric scale")
        frame_dt = args.frame_dt if args.frame_dt is not None else float(ctx.setting("odometry.frame_dt", 0.1))
        settings = RansacSettings.from_config(ctx.setting("odometry", {}))
        corr = load_correspondences_csv(entry.correspondences_path)
        return estimate_velocity(corr, intrinsics, args.speed, frame_dt, settings, frame_id).v
    path = entry.velocity_path
    if path is None and getattr(args, "velocity", None):
        path = Path(args.velocity)
    if path is None:
        return None
    if path not in cache:
        cache[path] = load_velocity_csv(path)
    estimate = velocity_for_frame(cache[path], frame_id)
    if estimate is None:
        raise MissingVelocity(frame_id)
    return estimate.v


def _prepare_bundles(ctx: CommandContext, entries: List[FrameEntry], intrinsics: CameraIntrinsics,
                     config: OptimizerConfig, with_velocity: bool) -> List[FrameBundle]:
    cloud_class, mask_class = ctx.class_ids()
    cache: Dict[Path, list] = {}
    bundles = []
    for frame_id, entry in enumerate(entries):
        cloud = load_cloud(entry.cloud_path)
        mask = load_mask_pgm(entry.mask_path, frame_id)
        velocity = _frame_velocity(ctx, entry, frame_id, intrinsics, cache) if with_velocity else None
        if with_velocity and velocity is None:
            raise MissingVelocity(frame_id)
        bundles.append(FrameBundle.prepare(cloud, mask, intrinsics, mask_class, config, velocity,
                                           frame_id, cloud_class_id=cloud_class))
    ctx.logger.info(f"Prepared {len(bundles)} frame(s)")
    return bundles


def _write_result(ctx: CommandContext, outputs: OutputManager, result: CalibrationResult,
                  include_delay: bool) -> None:
    outputs.write_json("result.json", result.to_dict())
    CSVTraceLogger(outputs.path_for("trace.csv")).write_trace(result.trace)
    if ctx.args.gt:
        error = evaluate_calibration(params_from_json(ctx.args.gt), result.params, include_delay, "result")
        outputs.write_json("metrics.json", json.loads(report_to_json([error])))
        outputs.write_text("metrics.txt", format_report_text([error]))
    print(f"status={result.status.value} final_loss={result.final_loss:.6g} iterations={result.iterations}")
    if result.failure_reason:
        print(f"reason={result.failure_reason}")


def _calibration_exit_code(result: CalibrationResult) -> int:
    if not result.failed:
        return EXIT_OK
    if result.failure_reason == ZERO_EXCITATION:
        return EXIT_UNIDENTIFIABLE
    return 4


def cmd_synth(ctx: CommandContext) -> int:
    args = ctx.args
    cloud_class, mask_class = ctx.class_ids()
    intrinsics = load_intrinsics(args.intrinsics) if args.intrinsics else kitti_like_intrinsics()
    clusters = args.clusters if args.clusters is not None else int(ctx.setting("synth.clusters", 5))
    points = args.points_per_cluster if args.points_per_cluster is not None else int(
        ctx.setting("synth.points_per_cluster", 200))
    frames = args.frames_count if args.frames_count is not None else int(ctx.setting("synth.frames", 1))
    speed = args.speed if args.speed is not None else float(ctx.setting("synth.speed", 8.0))
    delay = args.delay if args.delay is not None else float(ctx.setting("synth.delay", 0.1))
    frame_dt = args.frame_dt if args.frame_dt is not None else float(ctx.setting("odometry.frame_dt", 0.1))
    if frames < 1:
        raise InputError(f"--frames must be >= 1, got {frames}")

    config = SceneConfig(
        n_clusters=clusters, points_per_cluster=points, intrinsics=intrinsics, seed=args.seed,
        gt_delay=delay, gt_velocity=(0.0, 0.0, speed), n_background_points=args.background_points,
        label_flip_rate=args.label_flip_rate, cloud_class_id=cloud_class, mask_class_id=mask_class,
    )
    outputs = ctx.outputs([args.intrinsics])
    ctx.write_manifest(outputs, [args.intrinsics], seed=args.seed, clusters=clusters, points_per_cluster=points,
                       frames=frames, speed=speed, delay=delay, frame_dt=frame_dt,
                       correspondences=args.correspondences, outliers=args.outliers)

    bundles = generate_scenes(config, frames)
    correspondences = None
    if args.correspondences and speed > 0:
        pose = RigidTransform(np.eye(3), np.array(config.gt_velocity) * frame_dt)
        correspondences = {
            b.frame_id: make_two_view_correspondences(config, pose, outlier_fraction=args.outliers,
                                                      seed=args.seed * 1000 + b.frame_id).correspondences
            for b in bundles
        }
    written = write_scene(bundles, args.out, frame_dt, correspondences)
    print(f"wrote {len(bundles)} frame(s) to {args.out} ({', '.join(sorted(written))})")
    return EXIT_OK


def cmd_calibrate_static(ctx: CommandContext) -> int:
    args = ctx.args
    entries = _frame_entries(args)
    intrinsics, calib_init = _intrinsics(args, entries)
    if args.init:
        init = parse_init(args.init)
    elif calib_init is not None:
        init = calib_init
    else:
        raise InputError("--init is required (file or tx,ty,tz,rx,ry,rz)")
    config = ctx.optimizer_config(default_static_config())

    inputs = _input_paths(args, entries)
    outputs = ctx.outputs(inputs)
    ctx.write_manifest(outputs, inputs, seed=config.sample_seed, workers=config.workers,
                       init=[float(x) for x in init.to_vector(6)], stationary_only=args.stationary_only)

    bundles = _prepare_bundles(ctx, entries, intrinsics, config, with_velocity=args.stationary_only)
    if args.stationary_only:
        keep = select_stationary_frames([b.velocity for b in bundles], config.min_excitation_speed)
        if not keep:
            raise InputError("no frame is below the stationary speed threshold")
        ctx.logger.info(f"Using {len(keep)} of {len(bundles)} frames as stationary")
        bundles = [bundles[i] for i in keep]

    result = Calibrator(config, PerformanceMonitor()).calibrate_static(bundles, init)
    _write_result(ctx, outputs, result, include_delay=False)
    return _calibration_exit_code(result)


def cmd_calibrate_joint(ctx: CommandContext) -> int:
    args = ctx.args
    entries = _frame_entries(args)
    intrinsics, _ = _intrinsics(args, entries)
    static_params = params_from_json(args.static_result)
    config = ctx.optimizer_config(default_joint_config())

    inputs = _input_paths(args, entries)
    outputs = ctx.outputs(inputs)
    ctx.write_manifest(outputs, inputs, seed=config.sample_seed, workers=config.workers,
                       init_delay=args.init_delay, speed=args.speed, frame_dt=args.frame_dt)

    bundles = _prepare_bundles(ctx, entries, intrinsics, config, with_velocity=True)
    result = Calibrator(config, PerformanceMonitor()).calibrate_joint(bundles, static_params, args.init_delay)
    _write_result(ctx, outputs, result, include_delay=True)
    return _calibration_exit_code(result)


def cmd_eval(ctx: CommandContext) -> int:
    args = ctx.args
    if len(args.gt) not in (1, len(args.result)):
        raise InputError("give one --gt for all results or one per result")
    inputs = [Path(p) for p in args.result + args.gt]
    outputs = ctx.outputs(inputs)
    ctx.write_manifest(outputs, inputs, static=args.static)

    errors = []
    for i, result_path in enumerate(args.result):
        gt_path = args.gt[i] if len(args.gt) > 1 else args.gt[0]
        errors.append(evaluate_calibration(params_from_json(gt_path), params_from_json(result_path),
                                           include_delay=not args.static, label=f"run{i}"))
    text = format_report_text(errors)
    outputs.write_text("metrics.txt", text)
    outputs.write_json("metrics.json", json.loads(report_to_json(errors)))
    print(text, end="")
    return EXIT_OK


def cmd_render_overlay(ctx: CommandContext) -> int:
    args = ctx.args
    cloud_class, mask_class = ctx.class_ids()
    intrinsics = load_intrinsics(args.intrinsics)
    params = parse_init(args.params)
    if args.delay is not None:
        params = params.with_delay(args.delay)
    velocity = _float_list(args.velocity, 3, "--velocity") if args.velocity else None

    inputs = [Path(p) for p in (args.cloud, args.mask, args.intrinsics)]
    if Path(args.params).is_file():
        inputs.append(Path(args.params))
    outputs = ctx.outputs(inputs)
    ctx.write_manifest(outputs, inputs, delay=params.delay, velocity=velocity)

    cloud = filter_by_class(load_cloud(args.cloud), cloud_class)
    mask = load_mask_pgm(args.mask)
    image, audit = render_overlay(cloud, mask, intrinsics, params, mask_class, velocity)

    buffer = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buffer, format="PPM")
    outputs.write_bytes("overlay.ppm", buffer.getvalue())
    outputs.write_json("overlay.json", audit)
    ctx.logger.info(f"Overlay: {audit['splats']} splats, {audit['splats_on_class']} on class")
    print(f"splats={audit['splats']} splats_on_class={audit['splats_on_class']}")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--workers", default=None, help='objective evaluation threads (integer or "auto")')
    parser.add_argument("--settings", default=None, help="settings.json to use instead of config/settings.json")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--class-id-cloud", type=int, default=None, help="LIDAR label of the target class")
    parser.add_argument("--class-id-mask", type=int, default=None, help="mask class id of the target class")


def _add_frames(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--frames", default=None, help="manifest: cloud_path,mask_path[,vel:|corr:path] per line")
    parser.add_argument("--cloud", default=None, help="single-frame point cloud (.csv or KITTI .bin)")
    parser.add_argument("--mask", default=None, help="single-frame mask (binary PGM)")
    parser.add_argument("--intrinsics", default=None, help="key=value intrinsics file")
    parser.add_argument("--kitti-calib", default=None, help="KITTI calib.txt (intrinsics and initial guess)")
    parser.add_argument("--config", default=None, help="optimizer key=value config")
    parser.add_argument("--seed", type=int, default=None, help="pixel sampling seed")
    parser.add_argument("--gt", default=None, help="gt.json for metrics")
    parser.add_argument("--speed", type=float, default=None, help="ego speed (m/s) to scale odometry")
    parser.add_argument("--frame-dt", type=float, default=None, help="time between camera frames (s)")
    parser.add_argument("--velocity", default=None, help="velocity CSV shared by all frames")
    parser.add_argument("--correspondences", default=None, help="single-frame correspondences CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semsync", description="Semantic LIDAR-camera calibration")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic ground-truth scene")
    _add_common(synth)
    synth.add_argument("--clusters", type=int, default=None)
    synth.add_argument("--points-per-cluster", type=int, default=None)
    synth.add_argument("--frames", dest="frames_count", type=int, default=None)
    synth.add_argument("--speed", type=float, default=None, help="forward speed in the camera frame (m/s)")
    synth.add_argument("--delay", type=float, default=None, help="ground-truth delay (s)")
    synth.add_argument("--frame-dt", type=float, default=None)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--intrinsics", default=None)
    synth.add_argument("--background-points", type=int, default=0)
    synth.add_argument("--label-flip-rate", type=float, default=0.0)
    synth.add_argument("--correspondences", action="store_true", help="also write two-view correspondences")
    synth.add_argument("--outliers", type=float, default=0.0, help="outlier fraction of the correspondences")
    synth.set_defaults(handler=cmd_synth, config=None)

    static = sub.add_parser("calibrate-static", help="extrinsic calibration with the delay fixed at 0")
    _add_common(static)
    _add_frames(static)
    static.add_argument("--init", default=None, help='result/gt JSON or "tx,ty,tz,rx,ry,rz"')
    static.add_argument("--stationary-only", action="store_true",
                        help="use only frames whose velocity is below the excitation threshold")
    static.set_defaults(handler=cmd_calibrate_static)

    joint = sub.add_parser("calibrate-joint", help="joint extrinsic and delay calibration")
    _add_common(joint)
    _add_frames(joint)
    joint.add_argument("--static-result", required=True, help="result.json of calibrate-static")
    joint.add_argument("--init-delay", type=float, default=0.0, help="initial delay (s)")
    joint.set_defaults(handler=cmd_calibrate_joint)

    evaluate = sub.add_parser("eval", help="QAD / AEAD / ATD / delay error against ground truth")
    _add_common(evaluate)
    evaluate.add_argument("--result", nargs="+", required=True)
    evaluate.add_argument("--gt", nargs="+", required=True)
    evaluate.add_argument("--static", action="store_true", help="omit the delay error")
    evaluate.set_defaults(handler=cmd_eval, config=None)

    overlay = sub.add_parser("render-overlay", help="draw projected points over the mask (PPM)")
    _add_common(overlay)
    overlay.add_argument("--cloud", required=True)
    overlay.add_argument("--mask", required=True)
    overlay.add_argument("--intrinsics", required=True)
    overlay.add_argument("--params", required=True, help='result/gt JSON or "tx,ty,tz,rx,ry,rz"')
    overlay.add_argument("--velocity", default=None, help='"vx,vy,vz" in m/s')
    overlay.add_argument("--delay", type=float, default=None)
    overlay.set_defaults(handler=cmd_render_overlay, config=None)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one command and map errors to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        ctx = CommandContext(args)
        return args.handler(ctx)
    except SemSyncError as e:
        logger.error(f"{args.command}: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"{args.command}: invalid argument: {e}")
        return InputError.exit_code
    except OSError as e:
        logger.error(f"{args.command}: {e}")
        return DataFileError.exit_code


def main() -> int:
    return run(sys.argv[1:])
