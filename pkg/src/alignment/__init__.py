"""Point-to-pixel and pixel-to-point semantic alignment"""

from src.alignment.feature_transform import NearestPixelIndex, build_nearest_pixel_index, round_to_grid
from src.alignment.losses import (
    ProjectedSet, SampledPixels, LossTerms, project_cloud, downsample_pixels,
    loss_point_to_pixel, loss_pixel_to_point, match_pixels_to_points,
    alignment_terms, bidirectional_loss,
)
