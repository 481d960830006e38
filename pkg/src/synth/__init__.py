"""Ground-truth synthetic scenes"""

from src.synth.scene_generator import (
    SceneConfig, SceneBundle, TwoViewSample, kitti_like_intrinsics, kitti_like_extrinsics,
    generate_scene, generate_scenes, perturb_params, make_two_view_correspondences, write_scene,
)
