"""Forward and backward warping on token grids and at pixel resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .camera import (
    SOURCE_TO_TARGET,
    CameraIntrinsics,
    DepthMap,
    PatchGrid,
    RelativePose,
    make_patch_grid,
    pixel_centers,
    project_points,
    unproject_pixels,
)
from .errors import DimensionMismatch
from .mesh import ProxyMesh, cast_rays

TOKEN = "token"
PIXEL = "pixel"
FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class WarpField:
    """Per-cell mapped coordinates.

    For backward fields ``coords`` are source-image positions of the target
    grid cells; for forward fields they are target-image positions of the
    source grid cells. Invalid cells hold NaN.
    """

    grid: PatchGrid
    direction: str
    coords: np.ndarray
    valid: np.ndarray
    domain: str = TOKEN

    def __post_init__(self):
        if self.coords.shape != (self.grid.count, 2) or self.valid.shape != (self.grid.count,):
            raise DimensionMismatch("warp field size does not match its grid")

    def __len__(self):
        return self.grid.count


def _as_s2t(rel: RelativePose) -> RelativePose:
    return rel.as_direction(SOURCE_TO_TARGET)


def backward_warp_points(points, mesh: ProxyMesh, rel: RelativePose, K: CameraIntrinsics,
                         backend=None, nthreads=None) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates of arbitrary target-image points by ray casting.

    Target camera rays are moved into the source frame and intersected with
    the source-frame mesh; this is the same closest hit as moving the mesh
    into the target frame. Returns ``(coords, valid)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    t2s = _as_s2t(rel).inverse()
    rays = K.pixel_rays(points)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    dirs = rays @ t2s.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = t2s.translation
    hits = cast_rays(mesh, origin, dirs, backend=backend, nthreads=nthreads)
    valid = hits.hit.copy()
    uv, z = project_points(hits.point, K)
    valid &= np.isfinite(z) & (z > 0)
    coords = np.where(valid[:, None], uv, np.nan)
    return coords, valid


def backward_warp_grid(grid: PatchGrid, mesh: ProxyMesh, rel: RelativePose, K: CameraIntrinsics,
                       backend=None, nthreads=None) -> WarpField:
    if grid.image_shape != K.shape:
        raise DimensionMismatch("target grid does not match the camera resolution")
    coords, valid = backward_warp_points(grid.centers, mesh, rel, K, backend=backend, nthreads=nthreads)
    return WarpField(grid, BACKWARD, coords, valid, TOKEN if grid.patch_size > 1 else PIXEL)


def forward_warp_points(points, depth: DepthMap, rel: RelativePose,
                        K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unproject at the containing pixel's depth, transform, project.

    Returns ``(coords, valid, target_z)``. Coordinates are continuous and may
    fall outside the image; only depth validity and the camera's front
    half-space decide ``valid``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d, ok = depth.lookup_nearest(points)
    X = unproject_pixels(points, np.where(ok, d, 1.0), K)
    Xt = _as_s2t(rel).apply(X)
    uv, z = project_points(Xt, K)
    valid = ok & (z > 0)
    coords = np.where(valid[:, None], uv, np.nan)
    return coords, valid, np.where(valid, z, np.nan)


def forward_warp_grid(grid: PatchGrid, depth: DepthMap, rel: RelativePose,
                      K: CameraIntrinsics) -> WarpField:
    depth.check_matches(K)
    if grid.image_shape != depth.shape:
        raise DimensionMismatch("source grid does not match the depth map")
    if rel.is_identity():
        # skip the unproject/project round trip so identity maps are exact
        _, ok = depth.lookup_nearest(grid.centers)
        coords = np.where(ok[:, None], grid.centers, np.nan)
        return WarpField(grid, FORWARD, coords, ok, TOKEN if grid.patch_size > 1 else PIXEL)
    coords, valid, _ = forward_warp_points(grid.centers, depth, rel, K)
    return WarpField(grid, FORWARD, coords, valid, TOKEN if grid.patch_size > 1 else PIXEL)


def sample_bilinear(image: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous coordinates (pixel centers at +0.5).

    Out-of-range neighbours are clamped to the border. Returns float64 with
    the image's channel layout.
    """
    H, W = image.shape[:2]
    img = image.astype(np.float64)
    fx = coords[:, 0] - 0.5
    fy = coords[:, 1] - 0.5
    x0 = np.floor(fx)
    y0 = np.floor(fy)
    ax = (fx - x0)[:, None]
    ay = (fy - y0)[:, None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa, xb = np.clip(x0, 0, W - 1), np.clip(x0 + 1, 0, W - 1)
    ya, yb = np.clip(y0, 0, H - 1), np.clip(y0 + 1, 0, H - 1)
    if img.ndim == 2:
        img = img[..., None]
    top = img[ya, xa] * (1 - ax) + img[ya, xb] * ax
    bot = img[yb, xa] * (1 - ax) + img[yb, xb] * ax
    out = top * (1 - ay) + bot * ay
    return out if image.ndim == 3 else out[:, 0]


def _to_dtype(values: np.ndarray, dtype) -> np.ndarray:
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        return np.clip(np.rint(values), info.min, info.max).astype(dtype)
    return values.astype(dtype)


def pixel_backward_warp_image(image: np.ndarray, mesh: ProxyMesh, rel: RelativePose,
                              K: CameraIntrinsics, fill=0, backend=None,
                              nthreads=None) -> tuple[np.ndarray, np.ndarray]:
    """Target image by casting one ray per target pixel and sampling bilinearly.

    Returns ``(image, valid_mask)``; unmapped pixels get ``fill``.
    """
    H, W = image.shape[:2]
    if (H, W) != K.shape:
        raise DimensionMismatch("image does not match the camera resolution")
    grid = make_patch_grid(H, W, 1)
    field = backward_warp_grid(grid, mesh, rel, K, backend=backend, nthreads=nthreads)
    out = np.empty_like(image)
    flat = out.reshape(H * W, -1)
    flat[:] = fill
    if field.valid.any():
        vals = sample_bilinear(image, field.coords[field.valid])
        flat[field.valid] = _to_dtype(vals.reshape(int(field.valid.sum()), -1), image.dtype)
    return out, field.valid.reshape(H, W)


def pixel_forward_warp_image(image: np.ndarray, depth: DepthMap, rel: RelativePose,
                             K: CameraIntrinsics, fill=0, backend=None) -> tuple[np.ndarray, np.ndarray]:
    """Splat every valid source pixel to its nearest target pixel.

    Collisions keep the smallest target-frame depth, then the smallest source
    index. Returns ``(image, valid_mask)``; holes get ``fill``.
    """
    H, W = image.shape[:2]
    if (H, W) != depth.shape:
        raise DimensionMismatch("image and depth map sizes differ")
    depth.check_matches(K)
    centers = pixel_centers(H, W)
    coords, valid, z = forward_warp_points(centers, depth, rel, K)
    with np.errstate(invalid="ignore"):
        col = np.floor(np.where(valid, coords[:, 0], -1.0))
        row = np.floor(np.where(valid, coords[:, 1], -1.0))
        inside = valid & (col >= 0) & (col < W) & (row >= 0) & (row < H)
    target = np.where(inside, row * W + col, -1).astype(np.int64)
    zz = np.ascontiguousarray(np.where(inside, z, np.inf))
    winner = _backend.get(backend).splat_nearest(np.ascontiguousarray(target), zz, H * W)
    hit = winner >= 0
    out = np.empty_like(image)
    flat = out.reshape(H * W, -1)
    flat[:] = fill
    src = image.reshape(H * W, -1)
    flat[hit] = src[winner[hit]]
    return out, hit.reshape(H, W)
