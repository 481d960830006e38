"""
Exception hierarchy
Every error carries the CLI exit code it maps to
"""

from typing import Optional


class SemSyncError(Exception):
    """Base class for all calibration tool errors"""

    exit_code = 1


# Usage / bad input (exit 2)

class InputError(SemSyncError):
    """Invalid flags, arguments or parameter values"""

    exit_code = 2


class NotARotation(InputError):
    """Matrix is not a proper rotation"""


class MissingVelocity(InputError):
    """A frame bundle lacks the velocity the joint stage needs"""

    def __init__(self, frame_id: int):
        super().__init__(f"frame {frame_id} has no velocity")
        self.frame_id = frame_id


# Data files (exit 3)

class DataFileError(SemSyncError):
    """A data file could not be read or is malformed"""

    exit_code = 3

    def __init__(self, path, message: str, line: Optional[int] = None):
        location = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{location}: {message}")
        self.path = str(path)
        self.line = line


class FileMissing(DataFileError):
    def __init__(self, path):
        super().__init__(path, "file not found")


class ParseError(DataFileError):
    pass


class EmptyCloud(DataFileError):
    def __init__(self, path):
        super().__init__(path, "no valid point rows")


class LengthMismatch(DataFileError):
    pass


class TruncatedFile(DataFileError):
    pass


class BadMagic(DataFileError):
    pass


class BadHeader(DataFileError):
    pass


class TruncatedPixels(DataFileError):
    pass


# Alignment / optimization (exit 4)

class AlignmentError(SemSyncError):
    exit_code = 4


class ClassAbsent(AlignmentError):
    def __init__(self, class_id: int):
        super().__init__(f"class absent: no pixel of class {class_id}")
        self.class_id = class_id


class EmptyProjection(AlignmentError):
    def __init__(self, message: str = "no projected point inside the image"):
        super().__init__(message)


class OptimizationError(SemSyncError):
    exit_code = 4


class EvaluationFailed(OptimizationError):
    def __init__(self, frame_id: int, reason: str):
        super().__init__(f"evaluation failed on frame {frame_id}: {reason}")
        self.frame_id = frame_id
        self.reason = reason


class AllFramesDegenerate(OptimizationError):
    def __init__(self, reasons):
        unique = sorted(set(reasons))
        super().__init__(f"all frames degenerate: {'; '.join(unique)}")
        self.reasons = list(reasons)


# Odometry (exit 4)

class OdometryError(SemSyncError):
    exit_code = 4


class InsufficientCorrespondences(OdometryError):
    def __init__(self, count: int, required: int = 8):
        super().__init__(f"{count} correspondences, at least {required} required")
        self.count = count


class DegenerateConfiguration(OdometryError):
    pass


class CheiralityAmbiguous(OdometryError):
    pass


# Synthetic generation (exit 3)

class SynthError(SemSyncError):
    exit_code = 3


class EmptyScene(SynthError):
    pass


class TooFewVisible(SynthError):
    pass
