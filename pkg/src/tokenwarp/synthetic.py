"""Synthetic planar RGB-D scenes with closed-form correspondences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import (
    SOURCE_TO_TARGET,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    RelativePose,
    pixel_centers,
    project_points,
    relative_pose,
    unproject_pixels,
)
from .errors import NonPlanarScene

PLANE_COLORS = (
    ((235, 235, 235), (30, 30, 30)),
    ((220, 60, 40), (40, 90, 220)),
)


@dataclass(frozen=True)
class PlanePiece:
    """The part of plane ``normal . X = offset`` (source camera frame) seen
    through source columns ``[u_min, u_max)``."""

    normal: tuple[float, float, float]
    offset: float
    u_min: float
    u_max: float
    colors: tuple = PLANE_COLORS[0]


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: np.ndarray
    depth: DepthMap
    K: CameraIntrinsics
    source_pose: CameraPose
    target_pose: CameraPose
    pieces: tuple[PlanePiece, ...]
    period: int = 16
    params: dict = field(default_factory=dict)

    @property
    def rel(self) -> RelativePose:
        return relative_pose(self.source_pose, self.target_pose, SOURCE_TO_TARGET)


def rotation_ypr(yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Rotation about camera y (yaw), then x (pitch), then z (roll); radians."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Ry @ Rx @ Rz


def moved_camera(translation=(0.0, 0.0, 0.0), yaw=0.0, pitch=0.0, roll=0.0) -> CameraPose:
    """World-to-camera pose of a camera moved by ``translation`` and rotated in place.

    The world frame is the reference (identity) camera, so a translation of
    ``(0.2, 0, 0)`` moves the camera 0.2 m to the right.
    """
    c2w = np.eye(4)
    c2w[:3, :3] = rotation_ypr(yaw, pitch, roll)
    c2w[:3, 3] = translation
    return CameraPose.from_camera_to_world(c2w)


def orbit_camera(angle: float, pivot_depth: float, height: float = 0.0) -> CameraPose:
    """Camera swung about the vertical axis through ``(0, height, pivot_depth)``,
    still looking at the pivot."""
    R = rotation_ypr(yaw=angle)
    pivot = np.array([0.0, height, pivot_depth])
    c2w = np.eye(4)
    c2w[:3, :3] = R
    c2w[:3, 3] = pivot - R @ np.array([0.0, 0.0, pivot_depth])
    return CameraPose.from_camera_to_world(c2w)


def checker_color(coords: np.ndarray, period: int, colors) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    parity = (np.floor(coords[..., 0] / period) + np.floor(coords[..., 1] / period)).astype(np.int64) % 2
    palette = np.asarray(colors, dtype=np.uint8)
    return palette[parity]


def _piece_depth(piece: PlanePiece, rays: np.ndarray) -> np.ndarray:
    n = np.asarray(piece.normal, dtype=np.float64)
    return piece.offset / (rays @ n)


def _render_source(K: CameraIntrinsics, pieces, period: int):
    H, W = K.height, K.width
    centers = pixel_centers(H, W)
    rays = K.pixel_rays(centers)
    depth = np.zeros(H * W)
    image = np.zeros((H * W, 3), dtype=np.uint8)
    for piece in pieces:
        sel = (centers[:, 0] >= piece.u_min) & (centers[:, 0] < piece.u_max)
        depth[sel] = _piece_depth(piece, rays[sel])
        image[sel] = checker_color(centers[sel], period, piece.colors)
    if np.any(depth <= 0):
        raise ValueError("scene geometry puts pixels behind the camera")
    return image.reshape(H, W, 3), DepthMap(depth.reshape(H, W))


def _make_scene(K, pieces, target_pose, period, params, source_pose=None) -> SyntheticScene:
    image, depth = _render_source(K, pieces, period)
    source_pose = source_pose if source_pose is not None else CameraPose.identity()
    target_pose = target_pose if target_pose is not None else source_pose
    return SyntheticScene(image, depth, K, source_pose, target_pose, tuple(pieces), period, params)


def gen_plane_scene(K: CameraIntrinsics, z: float, period: int = 16, target_pose: CameraPose | None = None,
                    tilt_x: float = 0.0, tilt_y: float = 0.0) -> SyntheticScene:
    """Checkerboard plane crossing the optical axis at depth ``z``.

    ``tilt_x``/``tilt_y`` (radians) slant the plane about the camera x/y axes;
    both zero gives a constant-depth map.
    """
    if not z > 0:
        raise ValueError(f"plane depth must be positive, got {z}")
    n = rotation_ypr(yaw=tilt_y, pitch=tilt_x) @ np.array([0.0, 0.0, 1.0])
    if tilt_x == 0 and tilt_y == 0:
        n = np.array([0.0, 0.0, 1.0])
    piece = PlanePiece(tuple(float(a) for a in n), float(n[2] * z), -np.inf, np.inf, PLANE_COLORS[0])
    params = {"scene": "plane", "z": z, "period": period, "tilt_x": tilt_x, "tilt_y": tilt_y}
    return _make_scene(K, [piece], target_pose, period, params)


def gen_two_plane_scene(K: CameraIntrinsics, z_near: float, z_far: float, split,
                        target_pose: CameraPose | None = None, period: int = 16,
                        near_side: str = "right") -> SyntheticScene:
    """Two fronto-parallel planes seen side by side in the source view.

    A scalar ``split`` is the source column where they meet: columns left of
    it see the far plane and the rest the near plane (``near_side="left"``
    swaps them). A pair ``(u0, u1)`` makes the near plane a strip over source
    columns ``[u0, u1)`` with the far plane visible on both sides; only a
    bounded near surface lets points change left/right order while staying
    visible in both views.
    """
    if not 0 < z_near < z_far:
        raise ValueError("need 0 < z_near < z_far")
    if np.ndim(split) == 0:
        split = float(split)
        near_cols = [(split, np.inf)] if near_side == "right" else [(-np.inf, split)]
        far_cols = [(-np.inf, split)] if near_side == "right" else [(split, np.inf)]
    else:
        u0, u1 = (float(a) for a in split)
        if not u0 < u1:
            raise ValueError("near strip needs u0 < u1")
        near_side = "strip"
        split = [u0, u1]
        near_cols = [(u0, u1)]
        far_cols = [(-np.inf, u0), (u1, np.inf)]
    pieces = [PlanePiece((0.0, 0.0, 1.0), float(z_far), a, b, PLANE_COLORS[0]) for a, b in far_cols]
    pieces += [PlanePiece((0.0, 0.0, 1.0), float(z_near), a, b, PLANE_COLORS[1]) for a, b in near_cols]
    params = {"scene": "two-plane", "z_near": z_near, "z_far": z_far, "split": split,
              "near_side": near_side, "period": period}
    return _make_scene(K, pieces, target_pose, period, params)


def trace_target(scene: SyntheticScene, points) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form target-to-source correspondence for target-image points.

    Returns ``(source_coords, valid, target_depth, piece_index)``. A point is
    invalid when its ray meets no piece in front of both cameras or the hit
    projects outside the source image.
    """
    if not scene.pieces:
        raise NonPlanarScene("scene has no analytic plane description")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    K = scene.K
    t2s = scene.rel.inverse()
    d = K.pixel_rays(points) @ t2s.rotation.T  # parameter t is target depth
    o = t2s.translation
    best_t = np.full(len(points), np.inf)
    best_uv = np.full((len(points), 2), np.nan)
    best_piece = np.full(len(points), -1)
    for k, piece in enumerate(scene.pieces):
        n = np.asarray(piece.normal, dtype=np.float64)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (piece.offset - o @ n) / denom
            X = o + t[:, None] * d
            uv, z = project_points(X, K)
            ok = (denom != 0) & (t > 0) & (z > 0)
            ok &= (uv[:, 0] >= max(piece.u_min, 0.0)) & (uv[:, 0] < min(piece.u_max, K.width))
            ok &= (uv[:, 1] >= 0) & (uv[:, 1] < K.height)
            better = ok & (t < best_t)
        best_t[better] = t[better]
        best_uv[better] = uv[better]
        best_piece[better] = k
    valid = np.isfinite(best_t)
    return best_uv, valid, np.where(valid, best_t, np.nan), best_piece


def analytic_backward_oracle(scene: SyntheticScene, points) -> tuple[np.ndarray, np.ndarray]:
    coords, valid, _, _ = trace_target(scene, points)
    return coords, valid


def render_target(scene: SyntheticScene, fill=0) -> tuple[np.ndarray, DepthMap]:
    """Exact target-view image and depth (holes: ``fill`` colour, zero depth)."""
    H, W = scene.K.shape
    centers = pixel_centers(H, W)
    coords, valid, tz, piece = trace_target(scene, centers)
    image = np.full((H * W, 3), fill, dtype=np.uint8)
    for k, p in enumerate(scene.pieces):
        sel = valid & (piece == k)
        image[sel] = checker_color(coords[sel], scene.period, p.colors)
    depth = np.where(valid, tz, 0.0)
    return image.reshape(H, W, 3), DepthMap(depth.reshape(H, W))


def scene_points(scene: SyntheticScene, stride: int = 1, margin: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """World points from the source depth at pixel centers on a strided lattice.

    Pixels within ``margin`` columns of a piece boundary are skipped. Returns
    ``(points_world, source_pixels)``.
    """
    H, W = scene.K.shape
    v, u = np.mgrid[0:H:stride, 0:W:stride]
    pix = np.stack([u.ravel() + 0.5, v.ravel() + 0.5], axis=1)
    keep = np.ones(len(pix), dtype=bool)
    if margin:
        for p in scene.pieces:
            for edge in (p.u_min, p.u_max):
                if np.isfinite(edge):
                    keep &= np.abs(pix[:, 0] - edge) > margin
    pix = pix[keep]
    d = scene.depth.values[pix[:, 1].astype(int), pix[:, 0].astype(int)]
    X = unproject_pixels(pix, d, scene.K)
    Rinv, tinv = scene.source_pose.inverse_matrix_parts()
    return X @ Rinv.T + tinv, pix
