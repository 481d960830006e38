"""
Nearest same-class pixel lookup backed by an exact Euclidean feature transform
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from src.data.semantic_io import SemanticMask
from src.utils.errors import ClassAbsent
from src.utils.helpers import measure_performance

logger = logging.getLogger(__name__)


def round_to_grid(u, v, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Round continuous coordinates half-up to pixel centres, clamped to the grid"""
    iu = np.floor(np.asarray(u, dtype=np.float64) + 0.5).astype(np.int64)
    iv = np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.int64)
    return np.clip(iu, 0, width - 1), np.clip(iv, 0, height - 1)


@dataclass(frozen=True)
class NearestPixelIndex:
    """
    For every cell, the integer coordinates of the nearest pixel of class_id

    nearest_u / nearest_v are (height, width) grids. Cells of class_id hold
    their own coordinates.
    """

    width: int
    height: int
    class_id: int
    nearest_u: np.ndarray
    nearest_v: np.ndarray

    def lookup(self, u, v) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest class pixel for continuous coordinates (vectorized)"""
        iu, iv = round_to_grid(u, v, self.width, self.height)
        return self.nearest_u[iv, iu], self.nearest_v[iv, iu]

    def on_class(self, u, v) -> np.ndarray:
        """True where the rounded cell itself holds class_id"""
        iu, iv = round_to_grid(u, v, self.width, self.height)
        return (self.nearest_u[iv, iu] == iu) & (self.nearest_v[iv, iu] == iv)

    def distance_grid(self) -> np.ndarray:
        """Distance from every cell centre to its nearest class pixel"""
        rows, cols = np.indices((self.height, self.width))
        return np.hypot(self.nearest_u - cols, self.nearest_v - rows)


@measure_performance("nearest pixel index")
def build_nearest_pixel_index(mask: SemanticMask, class_id: int) -> NearestPixelIndex:
    """
    Build the index with scipy's exact Euclidean distance transform

    Equidistant candidates are resolved in scipy's scan order; the returned
    distance is exact either way.

    Raises:
        ClassAbsent: when no pixel of class_id exists
    """
    background = mask.classes != class_id
    if background.all():
        raise ClassAbsent(class_id)

    indices = ndimage.distance_transform_edt(background, return_distances=False, return_indices=True)
    nearest_v = indices[0].astype(np.int64)
    nearest_u = indices[1].astype(np.int64)
    nearest_u.setflags(write=False)
    nearest_v.setflags(write=False)
    logger.debug(f"Feature transform for class {class_id}: {mask.width}x{mask.height}, "
                 f"{int((~background).sum())} class pixels")
    return NearestPixelIndex(mask.width, mask.height, int(class_id), nearest_u, nearest_v)
