"""
Semantic inputs: segmented clouds, segmentation masks, correspondences
"""

from src.data.semantic_io import (
    SemanticPointCloud, SemanticMask, FeatureCorrespondences, FrameEntry,
    load_point_cloud_csv, save_point_cloud_csv,
    load_kitti_bin_with_labels, save_kitti_bin_with_labels,
    load_mask_pgm, save_mask_pgm, filter_by_class,
    load_correspondences_csv, save_correspondences_csv, load_frame_manifest,
)

__all__ = [
    "SemanticPointCloud", "SemanticMask", "FeatureCorrespondences", "FrameEntry",
    "load_point_cloud_csv", "save_point_cloud_csv",
    "load_kitti_bin_with_labels", "save_kitti_bin_with_labels",
    "load_mask_pgm", "save_mask_pgm", "filter_by_class",
    "load_correspondences_csv", "save_correspondences_csv", "load_frame_manifest",
]
