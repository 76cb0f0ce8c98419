"""Patch-wise depth maps from masonry point clouds.

Pipeline: parse or synthesise a point cloud, crop oriented surface patches,
render each patch to a depth image through a virtual pinhole camera, restore
the sparse noisy image with a boundary-masked diffusion null-space sampler,
and score the result against dense ground truth and brick instance masks.
"""

__version__ = "0.1.0"

from patchdepth.cloud import PointCloud, VoxelGridParams, parse_ply, write_ply, voxel_downsample
from patchdepth.patches import (
    PatchFrame,
    CropParams,
    Patch,
    estimate_normals,
    orient_normal,
    build_frame,
    crop_patch,
    sample_patches,
)
from patchdepth.camera import (
    CameraIntrinsics,
    DepthImage,
    BoundaryMask,
    camera_pose,
    world_to_camera,
    project,
    boundary_mask,
    normalize_depth,
    back_project,
)
from patchdepth.diffusion import DiffusionSchedule, build_schedule, q_sample, predict_clean, ddim_sigma, ddim_step
from patchdepth.denoisers import Denoiser, GaussianPrior, ZeroDenoiser, GaussianDenoiser
from patchdepth.restore import (
    MaskOperator,
    RestorationProblem,
    RestorationResult,
    RestorationError,
    range_null_correct,
    apply_boundary,
    sigma_scale,
    restore_patch,
    denormalize,
)
from patchdepth.wire import RemoteDenoiser, ProtocolError, ServerError, encode_request, decode_response
from patchdepth.synth import MasonrySpec, GroundTruth, make_surface, synth_wall, synth_ground_truth, degrade
from patchdepth.metrics import (
    InstanceMask,
    PromptSet,
    iou,
    miou,
    gen_prompts,
    depth_metrics,
    consistency_residual,
)
