"""
Performance Monitor for calibration runs
Tracks objective evaluation cost, iteration time and process memory
"""

import time
import logging
from contextlib import contextmanager
from typing import Dict, List, Optional

import psutil


class PerformanceMonitor:
    """Collects timings for one calibration run"""

    def __init__(self, config: Dict = None):
        self.config = config or {}
        self.logger = logging.getLogger(__name__)

        self.metrics: Dict[str, List[dict]] = {
            "evaluations": [],
            "iterations": [],
            "slow_operations": []
        }

        self.thresholds = {
            "iteration_warning": self.config.get("iteration_warning", 5.0),   # seconds
            "evaluation_warning": self.config.get("evaluation_warning", 1.0)  # seconds
        }

    def _get_memory_usage(self) -> float:
        """Get current memory usage in MB"""
        try:
            return psutil.Process().memory_info().rss / (1024 * 1024)
        except (psutil.Error, OSError):
            return 0.0

    def log_evaluation_time(self, duration: float):
        self.metrics["evaluations"].append({"value": duration})
        if duration > self.thresholds["evaluation_warning"]:
            self.log_slow_operation("objective evaluation", duration)

    def log_iteration_time(self, iteration: int, duration: float):
        self.metrics["iterations"].append({"iteration": iteration, "value": duration})
        if duration > self.thresholds["iteration_warning"]:
            self.log_slow_operation(f"iteration {iteration}", duration)

    def log_slow_operation(self, operation_name: str, duration: float):
        """Log operations that are slower than expected"""
        self.metrics["slow_operations"].append({
            "operation": operation_name,
            "duration": duration
        })
        if self.config.get("log_slow_operations", True):
            self.logger.warning(f"Slow operation [{operation_name}]: {duration:.3f}s")

    @contextmanager
    def time_iteration(self, iteration: int):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.log_iteration_time(iteration, time.perf_counter() - start)

    def get_performance_report(self) -> Dict:
        """Generate performance report"""
        evaluations = [m["value"] for m in self.metrics["evaluations"]]
        iterations = [m["value"] for m in self.metrics["iterations"]]

        return {
            "current_memory_mb": self._get_memory_usage(),
            "evaluations": len(evaluations),
            "avg_evaluation_time": sum(evaluations) / len(evaluations) if evaluations else 0.0,
            "iterations": len(iterations),
            "total_iteration_time": sum(iterations),
            "slow_operations_count": len(self.metrics["slow_operations"])
        }


def timed_call(monitor: Optional[PerformanceMonitor], func, *args, **kwargs):
    """Call func, reporting its wall time to monitor when one is attached"""
    if monitor is None:
        return func(*args, **kwargs)
    start = time.perf_counter()
    try:
        return func(*args, **kwargs)
    finally:
        monitor.log_evaluation_time(time.perf_counter() - start)
