"""Triangulated depth surfaces and ray casting against them."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _backend
from ._fallback import intersect
from .camera import CameraIntrinsics, DepthMap, RigidTransform, pixel_centers, unproject_pixels
from .errors import DegenerateDirection, EmptyDepth

EPS_RAY = 1e-6
EDGE_TOL = 1e-9
PARALLEL_EPS = 1e-12
UNIT_TOL = 1e-9
LEAF_SIZE = 4


@dataclass(frozen=True)
class RayHit:
    t: float
    point: np.ndarray
    triangle: int
    barycentric: np.ndarray


@dataclass(frozen=True, eq=False)
class RayHits:
    """Batched ``cast_rays`` result; ``triangle == -1`` marks a miss."""

    triangle: np.ndarray
    t: np.ndarray
    barycentric: np.ndarray
    point: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.triangle >= 0

    def __len__(self):
        return len(self.triangle)

    def __getitem__(self, i) -> RayHit | None:
        if self.triangle[i] < 0:
            return None
        return RayHit(float(self.t[i]), self.point[i].copy(), int(self.triangle[i]),
                      self.barycentric[i].copy())


class BVH:
    """Implicit binary tree over Morton-sorted triangles.

    Node ``k`` has children ``2k+1`` and ``2k+2``; leaves occupy the last
    ``n_leaves`` slots and hold ``leaf_size`` consecutive sorted triangles.
    Empty nodes carry inverted bounds.
    """

    def __init__(self, triangles: np.ndarray, leaf_size: int = LEAF_SIZE):
        triangles = np.ascontiguousarray(triangles, dtype=np.float64)
        n = len(triangles)
        self.leaf_size = leaf_size
        self.n_tris = n
        n_leaves = max(1, -(-n // leaf_size))
        n_leaves = 1 << (n_leaves - 1).bit_length()
        self.n_inner = n_leaves - 1

        self.order = _morton_order(triangles)
        self.triangles = np.ascontiguousarray(triangles[self.order])

        scale = float(np.abs(triangles).max()) if n else 1.0
        pad = 1e-7 * scale + 1e-12
        tri_lo = self.triangles.min(axis=1) - pad
        tri_hi = self.triangles.max(axis=1) + pad

        n_nodes = 2 * n_leaves - 1
        lo = np.full((n_nodes, 3), np.inf)
        hi = np.full((n_nodes, 3), -np.inf)
        if n:
            starts = np.arange(0, n, leaf_size)
            leaf_ids = self.n_inner + np.arange(len(starts))
            lo[leaf_ids] = np.minimum.reduceat(tri_lo, starts, axis=0)
            hi[leaf_ids] = np.maximum.reduceat(tri_hi, starts, axis=0)
        first = self.n_inner
        while first > 0:
            parent_first = (first - 1) // 2
            parents = np.arange(parent_first, first)
            lo[parents] = np.minimum(lo[2 * parents + 1], lo[2 * parents + 2])
            hi[parents] = np.maximum(hi[2 * parents + 1], hi[2 * parents + 2])
            first = parent_first
        self.lo = lo
        self.hi = hi

    def cast(self, origins, directions, backend=None, nthreads=None):
        if nthreads is None:
            nthreads = os.cpu_count() or 1
        kernels = _backend.get(backend)
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        directions = np.ascontiguousarray(directions, dtype=np.float64)
        return kernels.cast_rays(self.lo, self.hi, self.triangles, self.order,
                                 self.n_inner, self.leaf_size, origins, directions,
                                 EPS_RAY, EDGE_TOL, PARALLEL_EPS, nthreads)


def _morton_order(triangles: np.ndarray) -> np.ndarray:
    if len(triangles) == 0:
        return np.zeros(0, dtype=np.int64)
    cent = triangles.mean(axis=1)
    lo = cent.min(axis=0)
    span = np.maximum(cent.max(axis=0) - lo, 1e-30)
    q = np.clip(((cent - lo) / span * 1023.0).astype(np.int64), 0, 1023)
    code = np.zeros(len(cent), dtype=np.int64)
    for bit in range(10):
        for ax in range(3):
            code |= ((q[:, ax] >> bit) & 1) << (3 * bit + ax)
    return np.argsort(code, kind="stable").astype(np.int64)


@dataclass(eq=False)
class ProxyMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_pixel: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.vertex_pixel = np.asarray(self.vertex_pixel, dtype=np.float64)
        if len(self.triangles) and (self.triangles.max() >= len(self.vertices) or self.triangles.min() < 0):
            raise ValueError("triangle index out of range")

    @property
    def triangle_vertices(self) -> np.ndarray:
        """(T, 3, 3) corner coordinates."""
        return self.vertices[self.triangles]

    @cached_property
    def bvh(self) -> BVH:
        return BVH(self.triangle_vertices)


def build_mesh(depth: DepthMap, K: CameraIntrinsics, cull_ratio: float | None = None) -> ProxyMesh:
    """Unproject every valid pixel and split each 2x2 cell into two triangles.

    The split runs along the top-left/bottom-right diagonal, giving
    ``(TL, BL, TR)`` and ``(TR, BL, BR)``. Triangles touching an invalid pixel
    are dropped. With ``cull_ratio`` set, triangles whose max/min vertex depth
    ratio exceeds it are dropped too.
    """
    depth.check_matches(K)
    valid = depth.valid
    if not valid.any():
        raise EmptyDepth("depth map has no valid pixels")
    H, W = depth.shape
    centers = pixel_centers(H, W)
    flat_valid = valid.ravel()
    index = np.full(H * W, -1, dtype=np.int64)
    index[flat_valid] = np.arange(int(flat_valid.sum()))
    vertex_pixel = centers[flat_valid]
    vertices = unproject_pixels(vertex_pixel, depth.values.ravel()[flat_valid], K)

    index = index.reshape(H, W)
    tl = index[:-1, :-1].ravel()
    tr = index[:-1, 1:].ravel()
    bl = index[1:, :-1].ravel()
    br = index[1:, 1:].ravel()
    tris = np.stack([np.stack([tl, bl, tr], axis=1),
                     np.stack([tr, bl, br], axis=1)], axis=1).reshape(-1, 3)
    tris = tris[(tris >= 0).all(axis=1)]
    if cull_ratio is not None and len(tris):
        z = vertices[:, 2][tris]
        tris = tris[z.max(axis=1) <= cull_ratio * z.min(axis=1)]
    return ProxyMesh(vertices, tris, vertex_pixel)


def transform_mesh(mesh: ProxyMesh, T: RigidTransform) -> ProxyMesh:
    if T.is_identity():
        vertices = mesh.vertices.copy()
    else:
        vertices = T.apply(mesh.vertices)
    return ProxyMesh(vertices, mesh.triangles, mesh.vertex_pixel)


def _check_unit(directions: np.ndarray) -> None:
    norms = np.linalg.norm(directions, axis=-1)
    if np.any(~(np.abs(norms - 1.0) <= UNIT_TOL)):
        raise DegenerateDirection("ray directions must be unit length")


def _pack(mesh: ProxyMesh, origins, directions, tri, t, u, v) -> RayHits:
    hit = tri >= 0
    bary = np.zeros((len(tri), 3))
    bary[hit, 0] = 1.0 - u[hit] - v[hit]
    bary[hit, 1] = u[hit]
    bary[hit, 2] = v[hit]
    point = np.full((len(tri), 3), np.nan)
    point[hit] = origins[hit] + t[hit, None] * directions[hit]
    t = np.where(hit, t, np.inf)
    return RayHits(tri, t, bary, point)


def cast_rays(mesh: ProxyMesh, origins, directions, backend=None, nthreads=None) -> RayHits:
    """Closest hit with ``t > 1e-6`` for each ray, via the mesh's BVH."""
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), directions.shape)
    _check_unit(directions)
    tri, t, u, v = mesh.bvh.cast(origins, directions, backend=backend, nthreads=nthreads)
    return _pack(mesh, origins, directions, tri, t, u, v)


def cast_ray(mesh: ProxyMesh, origin, direction, backend=None) -> RayHit | None:
    return cast_rays(mesh, np.asarray(origin)[None], np.asarray(direction)[None], backend=backend)[0]


def cast_rays_brute_force(mesh: ProxyMesh, origins, directions, chunk: int = 64) -> RayHits:
    """Exhaustive all-triangle closest hit; reference for the BVH path."""
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    origins = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), directions.shape))
    _check_unit(directions)
    tv = mesh.triangle_vertices
    n = len(directions)
    tri = np.full(n, -1, dtype=np.int64)
    tt = np.full(n, np.inf)
    uu = np.zeros(n)
    vv = np.zeros(n)
    if len(tv) == 0:
        return _pack(mesh, origins, directions, tri, tt, uu, vv)
    for s in range(0, n, chunk):
        o = origins[s:s + chunk, None, :]
        d = directions[s:s + chunk, None, :]
        hit, t, u, v = intersect(o, d, tv[None, :, 0], tv[None, :, 1], tv[None, :, 2],
                                 EPS_RAY, EDGE_TOL, PARALLEL_EPS)
        t = np.where(hit, t, np.inf)
        best = np.argmin(t, axis=1)  # first occurrence: smallest index on ties
        rows = np.arange(len(best))
        found = np.isfinite(t[rows, best])
        tri[s:s + chunk] = np.where(found, best, -1)
        tt[s:s + chunk] = t[rows, best]
        uu[s:s + chunk] = np.where(found, u[rows, best], 0.0)
        vv[s:s + chunk] = np.where(found, v[rows, best], 0.0)
    return _pack(mesh, origins, directions, tri, tt, uu, vv)
