"""
Exports of calibration traces to external formats
"""

from .csv_logger import CSVTraceLogger

__all__ = ["CSVTraceLogger"]
