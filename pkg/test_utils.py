"""
Utility Tests
Settings, output safety, trace files, logging and performance tracking
"""

import json
import logging
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

sys.path.insert(0, os.path.dirname(__file__))

from src.calibration.calibrator import TraceEntry
from src.file.output_manager import OutputManager
from src.geometry.transforms import CalibrationParams
from src.integrations.csv_logger import TRACE_HEADER, CSVTraceLogger
from src.utils.config_manager import ConfigManager, resolve_workers
from src.utils.errors import FileMissing, InputError, ParseError
from src.utils.helpers import format_float, parse_key_value_file
from src.utils.logger import setup_logging
from src.utils.performance_monitor import PerformanceMonitor, timed_call


class TestConfigManager(unittest.TestCase):

    def test_defaults_without_file(self):
        """A missing settings file gives the built-in defaults"""
        with tempfile.TemporaryDirectory() as tmp:
            manager = ConfigManager(Path(tmp) / "settings.json")
            with patch.dict(os.environ, {}, clear=True):
                config = manager.load_config()
        self.assertEqual(manager.get_setting("classes.cloud", config), 10)
        self.assertEqual(manager.get_setting("classes.mask", config), 13)
        self.assertIsNone(manager.get_setting("classes.missing", config))

    def test_file_merges_with_defaults(self):
        """Keys in the file override; the rest keep their defaults"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "settings.json"
            path.write_text(json.dumps({"classes": {"mask": 26}}))
            manager = ConfigManager(path)
            with patch.dict(os.environ, {}, clear=True):
                config = manager.load_config()
        self.assertEqual(config["classes"]["mask"], 26)
        self.assertEqual(config["classes"]["cloud"], 10)
        self.assertEqual(config["odometry"]["ransac_iterations"], 500)

    def test_invalid_json_falls_back(self):
        """A corrupt settings file is ignored with a warning"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "settings.json"
            path.write_text("{not json")
            manager = ConfigManager(path)
            with patch.dict(os.environ, {}, clear=True), \
                    self.assertLogs("src.utils.config_manager", level="WARNING"):
                config = manager.load_config()
        self.assertEqual(config["runtime"]["workers"], 1)

    def test_environment_override(self):
        """SEMSYNC_* variables override file values"""
        with tempfile.TemporaryDirectory() as tmp:
            manager = ConfigManager(Path(tmp) / "settings.json")
            with patch.dict(os.environ, {"SEMSYNC_WORKERS": "3", "SEMSYNC_LOG_LEVEL": "DEBUG"}):
                config = manager.load_config()
        self.assertEqual(config["runtime"]["workers"], "3")
        self.assertEqual(config["logging"]["level"], "DEBUG")

    def test_resolve_workers(self):
        """Integers, numeric strings and "auto" all give a positive count"""
        self.assertEqual(resolve_workers(None), 1)
        self.assertEqual(resolve_workers(4), 4)
        self.assertEqual(resolve_workers("2"), 2)
        self.assertEqual(resolve_workers(0), 1)
        self.assertGreaterEqual(resolve_workers("auto"), 1)
        with self.assertRaises(ValueError):
            resolve_workers("many")


class TestHelpers(unittest.TestCase):

    def test_key_value_file(self):
        """Comments and blank lines are skipped; keys are lower-cased"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "values.txt"
            path.write_text("# header\n\nFX = 721.5\ncy=172.8  # inline\n")
            entries = parse_key_value_file(path)
        self.assertEqual(entries, {"fx": ("721.5", 3), "cy": ("172.8", 4)})

    def test_key_value_errors(self):
        """Missing '=' and duplicate keys report their line"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "values.txt"
            path.write_text("fx=1\nfx=2\n")
            with self.assertRaises(ParseError) as ctx:
                parse_key_value_file(path)
            self.assertEqual(ctx.exception.line, 2)
            path.write_text("fx 1\n")
            with self.assertRaises(ParseError) as ctx:
                parse_key_value_file(path)
            self.assertEqual(ctx.exception.line, 1)
            with self.assertRaises(FileMissing):
                parse_key_value_file(Path(tmp) / "absent.txt")

    def test_format_float(self):
        """Nine significant digits"""
        self.assertEqual(format_float(0.1), "0.1")
        self.assertEqual(format_float(1.0 / 3.0), "0.333333333")
        self.assertEqual(format_float(1e-12), "1e-12")


class TestOutputManager(unittest.TestCase):

    def test_writes_inside_directory(self):
        """Results land in the output directory"""
        with tempfile.TemporaryDirectory() as tmp:
            outputs = OutputManager(Path(tmp) / "out")
            path = outputs.write_json("result.json", {"b": 1, "a": 2})
            self.assertEqual(path.read_text(), '{\n  "a": 2,\n  "b": 1\n}\n')
            self.assertEqual(outputs.written, [path])

    def test_refuses_input_overwrite(self):
        """An input file inside the output directory is protected"""
        with tempfile.TemporaryDirectory() as tmp:
            cloud = Path(tmp) / "cloud.csv"
            cloud.write_text("1,2,3,10\n")
            outputs = OutputManager(tmp, [cloud])
            with self.assertLogs("src.file.output_manager", level="WARNING"):
                with self.assertRaises(InputError):
                    outputs.write_text("cloud.csv", "overwritten")
            self.assertEqual(cloud.read_text(), "1,2,3,10\n")

    def test_refuses_escape(self):
        """Names that leave the output directory are rejected"""
        with tempfile.TemporaryDirectory() as tmp:
            outputs = OutputManager(Path(tmp) / "out")
            with self.assertLogs("src.file.output_manager", level="WARNING"):
                self.assertFalse(outputs.is_safe_target("../escape.txt"))
            with self.assertRaises(InputError):
                outputs.write_bytes("../escape.bin", b"x")


class TestCSVTraceLogger(unittest.TestCase):

    def test_write_and_read(self):
        """One row per entry under the fixed header"""
        params = CalibrationParams([0.0, 0.1, 0.0], [0.5, -0.1, 0.2], 0.05)
        trace = [TraceEntry(0, 20.0, 12.5, params, True, 1.0),
                 TraceEntry(1, 20.0, 12.5, params, False)]
        with tempfile.TemporaryDirectory() as tmp:
            trace_logger = CSVTraceLogger(Path(tmp) / "trace.csv")
            path = trace_logger.write_trace(trace)
            lines = path.read_text().splitlines()
            losses = trace_logger.read_losses()
        self.assertEqual(lines[0], ",".join(TRACE_HEADER))
        self.assertEqual(lines[1], "0,20,12.5,1,1,0,0.1,0,0.5,-0.1,0.2,0.05")
        self.assertEqual(lines[2].split(",")[3], "0")
        self.assertEqual(losses, [12.5, 12.5])


class TestPerformanceMonitor(unittest.TestCase):

    def test_report(self):
        """Evaluations and iterations are counted and averaged"""
        monitor = PerformanceMonitor()
        monitor.log_evaluation_time(0.2)
        monitor.log_evaluation_time(0.4)
        with monitor.time_iteration(0):
            pass
        report = monitor.get_performance_report()
        self.assertEqual(report["evaluations"], 2)
        self.assertAlmostEqual(report["avg_evaluation_time"], 0.3)
        self.assertEqual(report["iterations"], 1)
        self.assertEqual(report["slow_operations_count"], 0)
        self.assertGreaterEqual(report["current_memory_mb"], 0.0)

    def test_slow_operations(self):
        """Durations above the threshold are recorded and warned about"""
        monitor = PerformanceMonitor({"evaluation_warning": 0.1})
        with self.assertLogs("src.utils.performance_monitor", level="WARNING"):
            monitor.log_evaluation_time(0.5)
        self.assertEqual(monitor.get_performance_report()["slow_operations_count"], 1)

    def test_timed_call(self):
        """timed_call returns the result and records one evaluation"""
        monitor = PerformanceMonitor()
        self.assertEqual(timed_call(monitor, pow, 2, 5), 32)
        self.assertEqual(timed_call(None, pow, 3, 2), 9)
        self.assertEqual(len(monitor.metrics["evaluations"]), 1)


class TestLogging(unittest.TestCase):

    def tearDown(self):
        setup_logging("WARNING", log_to_file=False)

    def test_repeated_setup_keeps_one_handler(self):
        """Calling setup twice does not duplicate console output"""
        root = logging.getLogger()
        before = len(root.handlers)
        setup_logging("INFO", log_to_file=False)
        after_first = len(root.handlers)
        setup_logging("DEBUG", log_to_file=False)
        self.assertEqual(len(root.handlers), after_first)
        self.assertLessEqual(after_first, before + 1)
        self.assertEqual(root.level, logging.DEBUG)

    def test_log_file(self):
        """File logging writes into the given directory"""
        with tempfile.TemporaryDirectory() as tmp:
            setup_logging("INFO", log_to_file=True, log_dir=Path(tmp))
            logging.getLogger("semsync.test").info("hello")
            setup_logging("WARNING", log_to_file=False)
            files = list(Path(tmp).glob("semsync_*.log"))
            self.assertEqual(len(files), 1)
            self.assertIn("hello", files[0].read_text(encoding="utf-8"))


if __name__ == '__main__':
    unittest.main()
