"""
Utility functions shared across the calibration tool
"""

import logging
import time
from functools import wraps
from pathlib import Path
from typing import Dict, Tuple

from src.utils.errors import FileMissing, ParseError


def ensure_directory(path: Path) -> Path:
    """Ensure a directory exists, create if it doesn't"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def require_file(path) -> Path:
    """Return path as a Path, raising FileMissing if it does not exist"""
    path = Path(path)
    if not path.is_file():
        raise FileMissing(path)
    return path


def parse_key_value_file(path) -> Dict[str, Tuple[str, int]]:
    """
    Parse a plain-text key=value file

    Blank lines and '#' comments are skipped. Keys are lower-cased.

    Returns:
        Mapping key -> (raw value, 1-based line number)
    """
    path = require_file(path)
    entries: Dict[str, Tuple[str, int]] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ParseError(path, f"expected key=value, got {line!r}", line_no)
            key, value = line.split('=', 1)
            key = key.strip().lower()
            if not key:
                raise ParseError(path, "empty key", line_no)
            if key in entries:
                raise ParseError(path, f"duplicate key {key!r}", line_no)
            entries[key] = (value.strip(), line_no)
    return entries


def parse_float_field(path, text: str, line: int, name: str = "value") -> float:
    """Parse a decimal (scientific notation allowed) with a positioned error"""
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, f"invalid {name} {text!r}", line) from None


def format_float(value: float) -> str:
    """Nine significant digits, enough for a float32 round trip"""
    return f"{value:.9g}"


def measure_performance(func_name: str = ""):
    """Decorator to measure function performance"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            result = func(*args, **kwargs)
            duration = time.perf_counter() - start_time
            logging.getLogger(func.__module__).debug(
                f"Performance [{func_name or func.__name__}]: {duration:.3f}s")
            return result
        return wrapper
    return decorator
