"""
CSV Trace Logger
Calibration traces as CSV that imports directly into a spreadsheet
"""

import csv
import logging
from pathlib import Path
from typing import Sequence

from src.utils.helpers import format_float

TRACE_HEADER = ['iteration', 'w', 'loss', 'accepted', 'step_scale',
                'rx', 'ry', 'rz', 'tx', 'ty', 'tz', 'delay_s']


class CSVTraceLogger:
    """Writes one row per optimizer iteration"""

    def __init__(self, filename="trace.csv"):
        self.filename = Path(filename)
        self.logger = logging.getLogger(__name__)

    def write_trace(self, trace: Sequence) -> Path:
        """Write TraceEntry records, replacing any previous file"""
        with open(self.filename, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(TRACE_HEADER)
            for entry in trace:
                writer.writerow(self._row(entry))
        self.logger.info(f"Wrote {len(trace)} trace rows to {self.filename}")
        return self.filename

    @staticmethod
    def _row(entry) -> list:
        params = entry.params
        return ([entry.iteration, format_float(entry.w), format_float(entry.loss),
                 int(entry.accepted), format_float(entry.step_scale)]
                + [format_float(x) for x in params.axis_angle]
                + [format_float(x) for x in params.translation]
                + [format_float(params.delay)])

    def read_losses(self) -> list:
        """Loss column of an existing trace file"""
        with open(self.filename, 'r', newline='', encoding='utf-8') as f:
            reader = csv.DictReader(f)
            return [float(row['loss']) for row in reader]
