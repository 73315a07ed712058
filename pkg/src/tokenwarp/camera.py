"""Pinhole cameras, rigid poses and patch grids.

Pixel coordinates are continuous: the center of integer pixel ``(u, v)`` sits
at ``(u + 0.5, v + 0.5)``. Poses are stored world-to-camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DimensionMismatch,
    IndivisibleResolution,
    InvalidDepth,
    NonPositiveDepth,
    NonRigidPose,
)

RIGID_TOL = 1e-6

SOURCE_TO_TARGET = "source_to_target"
TARGET_TO_SOURCE = "target_to_source"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @classmethod
    def from_matrix(cls, K, width: int, height: int) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=np.float64)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]),
                   int(width), int(height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def pixel_rays(self, pixels: np.ndarray) -> np.ndarray:
        """Unnormalized camera-frame directions ``K^-1 [u, v, 1]`` for (N, 2) pixels."""
        pixels = np.asarray(pixels, dtype=np.float64)
        rays = np.empty(pixels.shape[:-1] + (3,))
        rays[..., 0] = (pixels[..., 0] - self.cx) / self.fx
        rays[..., 1] = (pixels[..., 1] - self.cy) / self.fy
        rays[..., 2] = 1.0
        return rays


def project_points(points: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection without depth checks.

    Returns ``(uv, z)``; entries with ``z <= 0`` are meaningless and left to
    the caller to mask.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * points[..., 0] / z + K.cx
        v = K.fy * points[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1), z


def project_point(x, K: CameraIntrinsics) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not x[2] > 0:
        raise NonPositiveDepth(f"point has non-positive depth z={x[2]}")
    uv, _ = project_points(x, K)
    return uv


def unproject_pixels(pixels: np.ndarray, depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized ``d * K^-1 [u, v, 1]``; no validity checks."""
    return K.pixel_rays(pixels) * np.asarray(depth, dtype=np.float64)[..., None]


def unproject_pixel(p, d: float, K: CameraIntrinsics) -> np.ndarray:
    if not (np.isfinite(d) and d > 0):
        raise InvalidDepth(f"depth must be positive and finite, got {d}")
    return unproject_pixels(np.asarray(p, dtype=np.float64), np.float64(d), K)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R x + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, **kwargs):
        return cls(np.eye(3), np.zeros(3), **kwargs)

    @classmethod
    def from_matrix(cls, T, **kwargs):
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {T.shape}")
        return cls(T[:3, :3], T[:3, 3], **kwargs)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse_matrix_parts(self) -> tuple[np.ndarray, np.ndarray]:
        Rt = self.rotation.T
        return Rt, -Rt @ self.translation

    def is_identity(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.rotation - np.eye(3)) <= tol)
                    and np.all(np.abs(self.translation) <= tol))

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                    and np.allclose(self.translation, other.translation, rtol=0, atol=atol))


def check_rotation(R: np.ndarray, tol: float = RIGID_TOL) -> None:
    err = np.abs(R.T @ R - np.eye(3)).max()
    det = np.linalg.det(R)
    if err > tol or abs(det - 1.0) > tol:
        raise NonRigidPose(f"rotation is not orthonormal (|R^T R - I| = {err:.2e}, det = {det:.6f})")


@dataclass(frozen=True, eq=False)
class CameraPose(RigidTransform):
    """World-to-camera rigid transform."""

    def __post_init__(self):
        super().__post_init__()
        check_rotation(self.rotation)

    def inverse(self) -> RigidTransform:
        return RigidTransform(*self.inverse_matrix_parts())

    @classmethod
    def from_camera_to_world(cls, T) -> "CameraPose":
        T = np.asarray(T, dtype=np.float64)
        R = T[:3, :3]
        return cls(R.T, -R.T @ T[:3, 3])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True, eq=False)
class RelativePose(RigidTransform):
    """Camera-to-camera transform tagged with its direction."""

    direction: str = SOURCE_TO_TARGET

    def __post_init__(self):
        super().__post_init__()
        if self.direction not in (SOURCE_TO_TARGET, TARGET_TO_SOURCE):
            raise ValueError(f"unknown direction {self.direction!r}")

    def inverse(self) -> "RelativePose":
        flipped = TARGET_TO_SOURCE if self.direction == SOURCE_TO_TARGET else SOURCE_TO_TARGET
        return RelativePose(*self.inverse_matrix_parts(), direction=flipped)

    def as_direction(self, direction: str) -> "RelativePose":
        return self if direction == self.direction else self.inverse()

    def compose(self, first: RigidTransform) -> "RelativePose":
        """``self ∘ first``: apply ``first`` then ``self``."""
        return RelativePose(self.rotation @ first.rotation,
                            self.rotation @ first.translation + self.translation,
                            direction=self.direction)


def relative_pose(source: CameraPose, target: CameraPose,
                  direction: str = SOURCE_TO_TARGET) -> RelativePose:
    """Transform between two camera frames.

    ``source_to_target`` is ``Pi_T Pi_S^-1`` and maps source-camera coordinates
    into the target camera; ``target_to_source`` is its inverse.
    """
    if direction == SOURCE_TO_TARGET:
        a, b = target, source
    elif direction == TARGET_TO_SOURCE:
        a, b = source, target
    else:
        raise ValueError(f"unknown direction {direction!r}")
    Rb_inv = b.rotation.T
    R = a.rotation @ Rb_inv
    t = a.translation - R @ b.translation
    return RelativePose(R, t, direction=direction)


@dataclass(frozen=True)
class PatchGrid:
    """Regular, non-overlapping ``l x l`` patch grid in row-major order."""

    patch_size: int
    rows: int
    cols: int

    @property
    def count(self) -> int:
        return self.rows * self.cols

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.rows * self.patch_size, self.cols * self.patch_size

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def cell(self, index: int) -> tuple[int, int]:
        return divmod(index, self.cols)

    @cached_property
    def centers(self) -> np.ndarray:
        l = self.patch_size
        r, k = np.divmod(np.arange(self.count), self.cols)
        c = np.stack([k * l + l / 2.0, r * l + l / 2.0], axis=1)
        c.flags.writeable = False
        return c


def make_patch_grid(height: int, width: int, patch_size: int) -> PatchGrid:
    if patch_size < 1:
        raise ValueError(f"patch size must be >= 1, got {patch_size}")
    if height % patch_size or width % patch_size:
        raise IndivisibleResolution(
            f"patch size {patch_size} does not divide image size {height}x{width}")
    return PatchGrid(patch_size, height // patch_size, width // patch_size)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth with validity; invalid means ``d <= 0``, non-finite or masked."""

    values: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 3 and vals.shape[2] == 1:
            vals = vals[..., 0]
        if vals.ndim != 2:
            raise DimensionMismatch(f"depth must be 2-D, got shape {vals.shape}")
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(vals) & (vals > 0)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != vals.shape:
                raise DimensionMismatch("depth mask shape does not match depth")
            valid &= mask
        vals.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def check_matches(self, K: CameraIntrinsics) -> None:
        if self.shape != K.shape:
            raise DimensionMismatch(
                f"depth map is {self.shape[0]}x{self.shape[1]} but intrinsics say {K.height}x{K.width}")

    def lookup_nearest(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Depth at the pixel containing each continuous coordinate.

        Returns ``(depth, ok)``; ``ok`` is False outside the image or on
        invalid pixels.
        """
        uv = np.asarray(uv, dtype=np.float64)
        H, W = self.shape
        with np.errstate(invalid="ignore"):
            inside = (uv[..., 0] >= 0) & (uv[..., 0] < W) & (uv[..., 1] >= 0) & (uv[..., 1] < H)
        col = np.where(inside, np.floor(np.where(inside, uv[..., 0], 0)), 0).astype(np.int64)
        row = np.where(inside, np.floor(np.where(inside, uv[..., 1], 0)), 0).astype(np.int64)
        col = np.clip(col, 0, W - 1)
        row = np.clip(row, 0, H - 1)
        ok = inside & self.valid[row, col]
        return np.where(ok, self.values[row, col], np.nan), ok


def pixel_centers(height: int, width: int) -> np.ndarray:
    """(H*W, 2) continuous pixel-center coordinates in row-major order."""
    v, u = np.mgrid[0:height, 0:width]
    return np.stack([u.ravel() + 0.5, v.ravel() + 0.5], axis=1).astype(np.float64)
