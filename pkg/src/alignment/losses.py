"""
Semantic alignment losses between projected LIDAR points and mask pixels
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.alignment.feature_transform import NearestPixelIndex
from src.data.semantic_io import SemanticMask, SemanticPointCloud
from src.geometry.camera import CameraIntrinsics, delayed_translation, project_points
from src.geometry.transforms import CalibrationParams
from src.utils.errors import ClassAbsent, EmptyProjection, InputError

logger = logging.getLogger(__name__)

# Candidates fetched per query when resolving equidistant projected points
_TIE_CANDIDATES = 4


@dataclass(frozen=True)
class ProjectedSet:
    """Projected points inside the image, in input order"""

    uv: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return len(self.uv)

    @property
    def count(self) -> int:
        return len(self.uv)


@dataclass(frozen=True)
class SampledPixels:
    """Frozen sample of class pixels as integer (u, v) rows"""

    pixels: np.ndarray
    seed: int
    class_id: int
    total: int

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def count(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class LossTerms:
    """Both directional losses plus the element counts they were summed over"""

    point_to_pixel: float
    pixel_to_point: float
    n_points: int
    n_pixels: int

    def combined(self, w: float) -> float:
        if w == 0:
            return self.point_to_pixel
        return self.point_to_pixel + w * (self.n_points / self.n_pixels) * self.pixel_to_point

    @property
    def matched_elements(self) -> int:
        return self.n_points + self.n_pixels


def project_cloud(cloud: SemanticPointCloud, params: CalibrationParams, velocity,
                  intrinsics: CameraIntrinsics) -> ProjectedSet:
    """Delay-compensated projection of every point, culled to the image rectangle"""
    velocity = np.zeros(3) if velocity is None else velocity
    translation = delayed_translation(params.translation, velocity, params.delay)
    uv, valid = project_points(cloud.points, params.rotation, translation, intrinsics)
    inside = valid.copy()
    inside[valid] = ((uv[valid, 0] >= 0) & (uv[valid, 0] < intrinsics.width)
                     & (uv[valid, 1] >= 0) & (uv[valid, 1] < intrinsics.height))
    keep = np.flatnonzero(inside)
    return ProjectedSet(uv[keep], keep)


def loss_point_to_pixel(projected: ProjectedSet, index: NearestPixelIndex) -> float:
    """
    Sum of squared distances from each projected point to its nearest class pixel

    A point whose rounded cell already holds the class contributes nothing.
    Other points are measured from their continuous coordinates to the
    centre of the pixel the index returns for the rounded cell.
    """
    if len(projected) == 0:
        raise EmptyProjection()
    u = projected.uv[:, 0]
    v = projected.uv[:, 1]
    nu, nv = index.lookup(u, v)
    du = u - nu
    dv = v - nv
    squared = du * du + dv * dv
    squared[index.on_class(u, v)] = 0.0
    return float(np.sum(squared))


def point_to_pixel_matches(projected: ProjectedSet, index: NearestPixelIndex) -> Tuple[np.ndarray, np.ndarray]:
    """
    Off-class projected points and the class pixel each one is matched to

    Returns:
        (positions into projected, (k, 2) matched pixel coordinates)
    """
    if len(projected) == 0:
        raise EmptyProjection()
    u = projected.uv[:, 0]
    v = projected.uv[:, 1]
    off = np.flatnonzero(~index.on_class(u, v))
    nu, nv = index.lookup(u[off], v[off])
    return off, np.column_stack([nu, nv]).astype(np.float64)


def downsample_pixels(mask: SemanticMask, class_id: int, rate: float, seed: int) -> SampledPixels:
    """Seeded uniform sample of class pixels without replacement"""
    if not 0 < rate <= 1:
        raise InputError(f"sample rate must be in (0, 1], got {rate}")
    rows, cols = np.nonzero(mask.classes == class_id)
    total = len(rows)
    if total == 0:
        raise ClassAbsent(class_id)

    count = max(1, int(np.floor(rate * total + 0.5)))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(total, size=count, replace=False))
    pixels = np.stack([cols[chosen], rows[chosen]], axis=1).astype(np.int64)
    pixels.setflags(write=False)
    return SampledPixels(pixels, int(seed), int(class_id), total)


def match_pixels_to_points(sampled: SampledPixels, projected: ProjectedSet) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest projected point for each sampled pixel via a KD-tree

    Equidistant points resolve to the smaller source index.

    Returns:
        (squared distances, positions into projected)
    """
    if len(projected) == 0:
        raise EmptyProjection()
    queries = sampled.pixels.astype(np.float64)
    k = min(_TIE_CANDIDATES, len(projected))
    tree = cKDTree(projected.uv)
    _, candidates = tree.query(queries, k=k)
    candidates = np.asarray(candidates).reshape(len(queries), k)

    diff = queries[:, None, :] - projected.uv[candidates]
    squared = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]
    best = squared.min(axis=1, keepdims=True)
    ties = squared == best
    sources = np.where(ties, projected.source_index[candidates], np.iinfo(np.int64).max)
    pick = np.argmin(sources, axis=1)
    rows = np.arange(len(queries))
    return squared[rows, pick], candidates[rows, pick]


def loss_pixel_to_point(sampled: SampledPixels, projected: ProjectedSet) -> float:
    """Sum of squared distances from each sampled pixel to its nearest projected point"""
    squared, _ = match_pixels_to_points(sampled, projected)
    return float(np.sum(squared))


def alignment_terms(projected: ProjectedSet, index: NearestPixelIndex,
                    sampled: SampledPixels, with_pixel_to_point: bool = True) -> LossTerms:
    p2i = loss_point_to_pixel(projected, index)
    i2p = loss_pixel_to_point(sampled, projected) if with_pixel_to_point else 0.0
    return LossTerms(p2i, i2p, len(projected), len(sampled))


def bidirectional_loss(projected: ProjectedSet, index: NearestPixelIndex,
                       sampled: SampledPixels, w: float) -> float:
    """L_p2i + w * (n_p / n_i) * L_i2p; w == 0 returns L_p2i untouched"""
    return alignment_terms(projected, index, sampled, with_pixel_to_point=w != 0).combined(w)
