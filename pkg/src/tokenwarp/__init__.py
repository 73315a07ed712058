"""Depth-based viewpoint warping on vision-transformer token grids.

The hot kernels (BVH ray casting, z-buffer splatting) come from a compiled
extension when it is built and fall back to numpy otherwise; see
``tokenwarp._backend``.
"""

from ._backend import DEFAULT as BACKEND, available as available_backends
from .camera import (
    SOURCE_TO_TARGET,
    TARGET_TO_SOURCE,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PatchGrid,
    RelativePose,
    RigidTransform,
    make_patch_grid,
    project_point,
    project_points,
    relative_pose,
    unproject_pixel,
    unproject_pixels,
)
from .errors import *  # noqa: F401,F403
from .fetch import (
    ADAPTIVE,
    FORWARD_POSITIONS,
    NEAREST,
    FetchMap,
    Patch,
    adaptive_fetch,
    assemble_patches,
    extract_fixed_patches,
    fetch_tokens,
    forward_positions_map,
    nearest_fetch,
    nearest_indices,
)
from .jitter import JitterField, apply_jitter, gen_jitter_field
from .markers import Marker, render_markers
from .mesh import ProxyMesh, RayHit, build_mesh, cast_ray, cast_rays, cast_rays_brute_force, transform_mesh
from .synthetic import (
    SyntheticScene,
    analytic_backward_oracle,
    gen_plane_scene,
    gen_two_plane_scene,
    moved_camera,
    orbit_camera,
    render_target,
)
from .viewbench import (
    Keypoint,
    KeypointPair,
    ViewPairRecord,
    VqaInstance,
    annotate_pair,
    bin_and_sample_pairs,
    gen_question,
    geometry_oracle,
    overlap_bin,
    overlap_ratio,
    select_keypoint_pair,
    visible_set,
)
from .warp import (
    WarpField,
    backward_warp_grid,
    backward_warp_points,
    forward_warp_grid,
    forward_warp_points,
    pixel_backward_warp_image,
    pixel_forward_warp_image,
)

__version__ = "0.1.0"
