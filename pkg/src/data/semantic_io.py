"""
Semantic data model and file ingestion
Segmented point clouds, segmentation masks and feature correspondences
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from src.utils.errors import (
    BadHeader, BadMagic, EmptyCloud, InputError, LengthMismatch, ParseError,
    TruncatedFile, TruncatedPixels,
)
from src.utils.helpers import format_float, parse_float_field, require_file

logger = logging.getLogger(__name__)

# SemanticKITTI: lower 16 bits hold the semantic class, upper 16 the instance
LABEL_CLASS_MASK = 0xFFFF
KITTI_POINT_RECORD = 16
KITTI_LABEL_RECORD = 4


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SemanticPointCloud:
    """Points (N, 3) in the LIDAR frame with one class id per point"""

    points: np.ndarray
    labels: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        labels = np.array(self.labels, dtype=np.uint32).reshape(-1)
        if len(points) != len(labels):
            raise InputError(f"{len(points)} points but {len(labels)} labels")
        if not np.all(np.isfinite(points)):
            raise InputError("point coordinates must be finite")
        object.__setattr__(self, "points", _readonly(points))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "frame_id", int(self.frame_id))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class SemanticMask:
    """Per-pixel class ids, stored as an (height, width) row-major grid"""

    classes: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        classes = np.array(self.classes, dtype=np.uint8)
        if classes.ndim != 2:
            raise InputError(f"mask grid must be 2-D, got shape {classes.shape}")
        object.__setattr__(self, "classes", _readonly(classes))
        object.__setattr__(self, "frame_id", int(self.frame_id))

    @classmethod
    def from_flat(cls, width: int, height: int, classes, frame_id: int = 0) -> "SemanticMask":
        classes = np.asarray(classes)
        if classes.size != width * height:
            raise InputError(f"grid has {classes.size} cells, expected {width}x{height}")
        return cls(classes.reshape(height, width), frame_id)

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    def class_at(self, u: int, v: int) -> int:
        return int(self.classes[v, u])


@dataclass(frozen=True)
class FeatureCorrespondences:
    """Tracked pixel pairs from frame k+delta-1 (first) to frame k+delta (second)"""

    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        first = np.array(self.first, dtype=np.float64).reshape(-1, 2)
        second = np.array(self.second, dtype=np.float64).reshape(-1, 2)
        if first.shape != second.shape:
            raise InputError("correspondence arrays differ in length")
        if not (np.all(np.isfinite(first)) and np.all(np.isfinite(second))):
            raise InputError("correspondence coordinates must be finite")
        object.__setattr__(self, "first", _readonly(first))
        object.__setattr__(self, "second", _readonly(second))

    def __len__(self) -> int:
        return len(self.first)

    @property
    def pairs(self) -> List[tuple]:
        return [((a[0], a[1]), (b[0], b[1])) for a, b in zip(self.first, self.second)]

    def subset(self, mask) -> "FeatureCorrespondences":
        return FeatureCorrespondences(self.first[mask], self.second[mask])

    def check_within(self, width: int, height: int, margin: float = 0.1) -> None:
        """Reject coordinates outside the image rectangle grown by margin on each side"""
        lo = np.array([-margin * width, -margin * height])
        hi = np.array([(1 + margin) * width, (1 + margin) * height])
        for name, points in (("first", self.first), ("second", self.second)):
            outside = np.any((points < lo) | (points > hi), axis=1)
            if np.any(outside):
                index = int(np.argmax(outside))
                raise InputError(f"correspondence {index} ({name} view) outside the image "
                                 f"rectangle with {margin:.0%} margin: {points[index]}")


def _data_rows(path: Path, expected_columns: int):
    """Yield (line number, row) for non-comment, non-blank CSV rows"""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        for row in reader:
            line = reader.line_num
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith('#'):
                continue
            if len(row) != expected_columns:
                raise ParseError(path, f"expected {expected_columns} columns, got {len(row)}", line)
            yield line, [cell.strip() for cell in row]


def _parse_label(path: Path, text: str, line: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(path, f"invalid label {text!r}", line) from None
    if value < 0 or value > 0xFFFFFFFF:
        raise ParseError(path, f"label {value} out of range", line)
    return value


def load_point_cloud_csv(path, frame_id: int = 0) -> SemanticPointCloud:
    """Load "x,y,z,label" rows; '#' comments and blank lines are skipped"""
    path = require_file(path)
    points = []
    labels = []
    for line, row in _data_rows(path, 4):
        xyz = [parse_float_field(path, text, line, "coordinate") for text in row[:3]]
        if not all(np.isfinite(xyz)):
            raise ParseError(path, "non-finite coordinate", line)
        points.append(xyz)
        labels.append(_parse_label(path, row[3], line))
    if not points:
        raise EmptyCloud(path)
    logger.debug(f"Loaded {len(points)} points from {path}")
    return SemanticPointCloud(np.array(points), np.array(labels, dtype=np.uint32), frame_id)


def save_point_cloud_csv(cloud: SemanticPointCloud, path) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(["# x", "y", "z", "label"])
        for point, label in zip(cloud.points, cloud.labels):
            writer.writerow([format_float(c) for c in point] + [int(label)])
    return path


def load_kitti_bin_with_labels(bin_path, label_path, frame_id: int = 0) -> SemanticPointCloud:
    """
    Load a KITTI velodyne scan with its SemanticKITTI label file

    Points are little-endian float32 (x, y, z, intensity); intensity is
    dropped. Labels are little-endian uint32 masked to the lower 16 bits.
    """
    bin_path = require_file(bin_path)
    label_path = require_file(label_path)
    raw_points = bin_path.read_bytes()
    raw_labels = label_path.read_bytes()
    if len(raw_points) % KITTI_POINT_RECORD:
        raise TruncatedFile(bin_path, f"{len(raw_points)} bytes is not a multiple of {KITTI_POINT_RECORD}")
    if len(raw_labels) % KITTI_LABEL_RECORD:
        raise TruncatedFile(label_path, f"{len(raw_labels)} bytes is not a multiple of {KITTI_LABEL_RECORD}")

    scan = np.frombuffer(raw_points, dtype='<f4').reshape(-1, 4)
    labels = np.frombuffer(raw_labels, dtype='<u4')
    if len(scan) != len(labels):
        raise LengthMismatch(label_path, f"{len(labels)} labels for {len(scan)} points")
    if len(scan) == 0:
        raise EmptyCloud(bin_path)
    if not np.all(np.isfinite(scan[:, :3])):
        raise ParseError(bin_path, "non-finite coordinate")
    return SemanticPointCloud(scan[:, :3].astype(np.float64), labels & LABEL_CLASS_MASK, frame_id)


def save_kitti_bin_with_labels(cloud: SemanticPointCloud, bin_path, label_path,
                               intensity: float = 0.0) -> None:
    scan = np.empty((len(cloud), 4), dtype='<f4')
    scan[:, :3] = cloud.points
    scan[:, 3] = intensity
    Path(bin_path).write_bytes(scan.tobytes())
    Path(label_path).write_bytes(cloud.labels.astype('<u4').tobytes())


def _next_token(data: bytes, pos: int, path: Path):
    """Read one whitespace-delimited PGM header token, skipping '#' comments"""
    n = len(data)
    while pos < n:
        if data[pos:pos + 1] == b'#':
            while pos < n and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
        pos += 1
    if start == pos:
        raise BadHeader(path, "header ended early")
    return data[start:pos], pos


def load_mask_pgm(path, frame_id: int = 0) -> SemanticMask:
    """
    Load a binary (P5) PGM whose pixel values are class ids

    The header is checked here for positioned errors; Pillow decodes the
    pixel block raw, so a maxval below 255 never rescales class ids.
    """
    path = require_file(path)
    data = path.read_bytes()
    if data[:2] != b'P5':
        raise BadMagic(path, f"expected P5, got {data[:2]!r}")
    pos = 2
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise BadMagic(path, "magic not followed by whitespace")

    header = []
    for name in ("width", "height", "maxval"):
        token, pos = _next_token(data, pos, path)
        try:
            header.append(int(token))
        except ValueError:
            raise BadHeader(path, f"invalid {name} {token!r}") from None
    width, height, maxval = header
    if width <= 0 or height <= 0:
        raise BadHeader(path, f"invalid size {width}x{height}")
    if not 0 < maxval <= 255:
        raise BadHeader(path, f"maxval {maxval} not in 1..255")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise BadHeader(path, "no whitespace after maxval")
    pos += 1

    expected = width * height
    present = len(data) - pos
    if present < expected:
        raise TruncatedPixels(path, f"{present} of {expected} pixel bytes present")
    image = Image.frombytes("L", (width, height), data[pos:pos + expected])
    return SemanticMask(np.asarray(image, dtype=np.uint8), frame_id)


def save_mask_pgm(mask: SemanticMask, path) -> Path:
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(mask.classes, dtype=np.uint8), mode='L').save(path, format='PPM')
    return path


def filter_by_class(cloud: SemanticPointCloud, class_id: int) -> SemanticPointCloud:
    """Keep the points labelled class_id, preserving order"""
    keep = cloud.labels == class_id
    return SemanticPointCloud(cloud.points[keep], cloud.labels[keep], cloud.frame_id)


def load_correspondences_csv(path) -> FeatureCorrespondences:
    """Load "u1,v1,u2,v2" rows; an empty file gives zero pairs"""
    path = require_file(path)
    rows = []
    for line, row in _data_rows(path, 4):
        values = [parse_float_field(path, text, line, "coordinate") for text in row]
        if not all(np.isfinite(values)):
            raise ParseError(path, "non-finite coordinate", line)
        rows.append(values)
    data = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return FeatureCorrespondences(data[:, :2], data[:, 2:])


def save_correspondences_csv(correspondences: FeatureCorrespondences, path) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(["# u1", "v1", "u2", "v2"])
        for a, b in zip(correspondences.first, correspondences.second):
            writer.writerow([format_float(a[0]), format_float(a[1]), format_float(b[0]), format_float(b[1])])
    return path


@dataclass(frozen=True)
class FrameEntry:
    """One line of a frame manifest"""

    cloud_path: Path
    mask_path: Path
    velocity_path: Optional[Path] = None
    correspondences_path: Optional[Path] = None


def load_frame_manifest(path) -> List[FrameEntry]:
    """
    Parse a frame list: ``cloud_path,mask_path[,extra]`` per line

    ``extra`` is ``vel:<path>`` for a velocity CSV, ``corr:<path>`` for a
    correspondences CSV, or a bare path (velocity CSV). Relative paths are
    resolved against the manifest's directory.
    """
    path = require_file(path)
    base = path.parent
    entries = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        for row in reader:
            line = reader.line_num
            if not row or not "".join(row).strip() or row[0].lstrip().startswith('#'):
                continue
            row = [cell.strip() for cell in row]
            if len(row) not in (2, 3):
                raise ParseError(path, f"expected 2 or 3 columns, got {len(row)}", line)
            velocity = correspondences = None
            if len(row) == 3:
                extra = row[2]
                if extra.startswith("corr:"):
                    correspondences = base / extra[len("corr:"):]
                elif extra.startswith("vel:"):
                    velocity = base / extra[len("vel:"):]
                else:
                    velocity = base / extra
            entries.append(FrameEntry(base / row[0], base / row[1], velocity, correspondences))
    if not entries:
        raise ParseError(path, "manifest lists no frames")
    return entries
