"""
Projection overlay: mask class pixels, background and splatted LIDAR points
"""

import logging
from typing import Dict, Tuple

import numpy as np

from src.alignment.feature_transform import round_to_grid
from src.alignment.losses import project_cloud
from src.data.semantic_io import SemanticMask, SemanticPointCloud
from src.geometry.camera import CameraIntrinsics
from src.geometry.transforms import CalibrationParams

logger = logging.getLogger(__name__)

CLASS_COLOR = (255, 220, 0)        # yellow
BACKGROUND_COLOR = (70, 30, 110)   # purple
POINT_COLOR = (230, 20, 20)        # red
SPLAT_RADIUS = 1                   # 3x3 squares


def render_overlay(cloud: SemanticPointCloud, mask: SemanticMask, intrinsics: CameraIntrinsics,
                   params: CalibrationParams, mask_class_id: int, velocity=None) -> Tuple[np.ndarray, Dict]:
    """
    Draw the projected cloud over the mask

    Returns:
        (RGB image (height, width, 3) uint8, audit with splat counts)
    """
    on_class = mask.classes == mask_class_id
    image = np.empty((mask.height, mask.width, 3), dtype=np.uint8)
    image[...] = BACKGROUND_COLOR
    image[on_class] = CLASS_COLOR

    projected = project_cloud(cloud, params, velocity, intrinsics)
    iu, iv = round_to_grid(projected.uv[:, 0], projected.uv[:, 1], mask.width, mask.height)
    for du in range(-SPLAT_RADIUS, SPLAT_RADIUS + 1):
        for dv in range(-SPLAT_RADIUS, SPLAT_RADIUS + 1):
            su = np.clip(iu + du, 0, mask.width - 1)
            sv = np.clip(iv + dv, 0, mask.height - 1)
            image[sv, su] = POINT_COLOR

    splats = len(projected)
    splats_on_class = int(on_class[iv, iu].sum()) if splats else 0
    audit = {
        "splats": splats,
        "splats_on_class": splats_on_class,
        "splats_off_class": splats - splats_on_class,
        "on_class_fraction": splats_on_class / splats if splats else 0.0,
    }
    if splats == 0:
        logger.warning("No projected point falls inside the image; overlay shows the mask only")
    return image, audit
