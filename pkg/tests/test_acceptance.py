"""Acceptance criteria on synthetic ground truth.

Each test carries ``@pytest.mark.acceptance(n)``; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the run.
"""

import math
import time

import numpy as np
import pytest

from helpers import random_pose
from tokenwarp import io as twio
from tokenwarp.camera import (
    CameraIntrinsics,
    DepthMap,
    PatchGrid,
    make_patch_grid,
)
from tokenwarp.errors import BadMagic
from tokenwarp.fetch import (
    ADAPTIVE,
    FORWARD_POSITIONS,
    NEAREST,
    FetchMap,
    extract_fixed_patches,
    nearest_fetch,
)
from tokenwarp.jitter import PIXEL_BASELINE, apply_jitter, gen_jitter_field
from tokenwarp.mesh import build_mesh, cast_rays, cast_rays_brute_force
from tokenwarp.synthetic import (
    analytic_backward_oracle,
    gen_plane_scene,
    gen_two_plane_scene,
    moved_camera,
    orbit_camera,
    render_target,
    scene_points,
)
from tokenwarp.viewbench import (
    ViewSample,
    covisible_projections,
    flips,
    geometry_oracle,
    overlap_bin,
    overlap_ratio,
    select_keypoint_pair,
    target_answer,
    visible_set,
)
from tokenwarp.warp import (
    BACKWARD,
    WarpField,
    backward_warp_grid,
    backward_warp_points,
    forward_warp_grid,
    pixel_backward_warp_image,
    pixel_forward_warp_image,
)


# -- 1 ----------------------------------------------------------------------

@pytest.mark.acceptance(1)
def test_identity_law(backend, K128):
    start = time.perf_counter()
    scene = gen_plane_scene(K128, 2.0)
    grid = make_patch_grid(128, 128, 16)
    mesh = build_mesh(scene.depth, K128)
    field = backward_warp_grid(grid, mesh, scene.rel, K128, backend=backend)
    fmap = nearest_fetch(field, grid)
    elapsed = time.perf_counter() - start
    assert field.valid.all()
    assert np.abs(field.coords - grid.centers).max() <= 1e-3
    assert np.abs(fmap.coords - grid.centers).max() <= 1e-3
    assert np.array_equal(fmap.nearest_index, np.arange(grid.count))
    assert elapsed < 1.0


# -- 2 ----------------------------------------------------------------------

@pytest.mark.acceptance(2)
def test_homography_equivalence(backend, K128):
    rng = np.random.default_rng(2024)
    grid = make_patch_grid(128, 128, 4)
    start = time.perf_counter()
    worst, compared = 0.0, 0
    for k in range(20):
        tilt = rng.uniform(-0.4, 0.4, size=2)
        scene = gen_plane_scene(K128, rng.uniform(1.5, 3.0), target_pose=random_pose(rng),
                                tilt_x=tilt[0], tilt_y=tilt[1])
        mesh = build_mesh(scene.depth, K128)
        field = backward_warp_grid(grid, mesh, scene.rel, K128, backend=backend)
        expect, ok = analytic_backward_oracle(scene, grid.centers)
        # the mesh is a subset of the plane, so every engine hit is an oracle hit
        assert not np.any(field.valid & ~ok)
        both = field.valid & ok
        compared += int(both.sum())
        if both.any():
            worst = max(worst, float(np.abs(field.coords[both] - expect[both]).max()))
        # and the mesh covers everything between the outer pixel centers
        inner = ok & np.all((expect > 0.5 + 1e-6) & (expect < 127.5 - 1e-6), axis=1)
        assert field.valid[inner].all()
    elapsed = time.perf_counter() - start
    assert compared > 5000
    assert worst <= 1e-2
    assert elapsed < 10.0


# -- 3 ----------------------------------------------------------------------

@pytest.mark.acceptance(3)
def test_forward_backward_round_trip(backend, K128):
    """Forward at a source center c gives c*; backward at c* must return near c."""
    rng = np.random.default_rng(3)
    grid = make_patch_grid(128, 128, 4)
    errors = []
    for k in range(10):
        tilt = rng.uniform(-0.3, 0.3, size=2)
        scene = gen_plane_scene(K128, rng.uniform(1.5, 3.0), target_pose=random_pose(rng, 10, 0.3),
                                tilt_x=tilt[0], tilt_y=tilt[1])
        mesh = build_mesh(scene.depth, K128)
        fwd = forward_warp_grid(grid, scene.depth, scene.rel, K128)
        cstar = fwd.coords
        inside = fwd.valid & np.all((cstar >= 1) & (cstar <= 127), axis=1)
        back, ok = backward_warp_points(cstar[inside], mesh, scene.rel, K128, backend=backend)
        err = np.full(int(inside.sum()), np.inf)
        err[ok] = np.linalg.norm(back[ok] - grid.centers[inside][ok], axis=1)
        errors.append(err)
    err = np.concatenate(errors)
    assert len(err) > 5000
    assert np.mean(err < 0.5) >= 0.95


# -- 4 ----------------------------------------------------------------------

def flip_pairs(per_scene=40):
    """Flip pairs from near-strip two-plane scenes seen by orbiting cameras."""
    K = CameraIntrinsics(128.0, 128.0, 128.0, 128.0, 256, 256)
    out = []
    seen = set()
    for angle in (20, -20, 25, -25, 30, -30):
        taken = 0
        scene = gen_two_plane_scene(K, 0.5, 3.0, (112, 144), orbit_camera(math.radians(angle), 1.5))
        _, t_depth = render_target(scene)
        pts, _ = scene_points(scene, stride=4, margin=2)
        cov, suv, tuv, sz, tz = covisible_projections(
            pts, ViewSample(scene.source_pose, scene.depth), ViewSample(scene.target_pose, t_depth), K)
        for seed in range(200):
            pair = select_keypoint_pair(cov, suv, tuv, 50.0, seed, sz, tz)
            if pair is None:
                continue
            key = (angle, pair.a.index, pair.b.index)
            if key in seen:
                continue
            seen.add(key)
            out.append((scene, pair))
            taken += 1
            if taken == per_scene:
                break
    return out


@pytest.mark.acceptance(4)
def test_geometry_oracle_on_flip_pairs():
    pairs = flip_pairs()
    assert len(pairs) >= 200
    correct = 0
    for scene, pair in pairs:
        assert flips(pair.a.source_uv[0], pair.b.source_uv[0], pair.a.target_uv[0], pair.b.target_uv[0], 50.0)
        truth = target_answer(pair)
        correct += geometry_oracle(pair, scene.depth, scene.rel, scene.K) == truth
    assert correct == len(pairs)


# -- 5 ----------------------------------------------------------------------

@pytest.mark.acceptance(5)
def test_nearest_fetch_matches_argmin():
    rng = np.random.default_rng(5)
    ties = 0
    for trial in range(1000):
        l = int(rng.choice([1, 2, 4, 8, 14, 16]))
        rows, cols = (int(a) for a in rng.integers(1, 9, size=2))
        grid = PatchGrid(l, rows, cols)
        H, W = grid.image_shape
        coords = rng.uniform(-0.25 * W, 1.25 * W, size=(grid.count, 2))
        coords[:, 1] = rng.uniform(-0.25 * H, 1.25 * H, size=grid.count)
        # force exact midpoints between neighbouring centers on some cells
        mid = rng.random(grid.count) < 0.3
        a = rng.integers(grid.count, size=grid.count)
        b = np.minimum(a + rng.choice([1, cols], size=grid.count), grid.count - 1)
        coords[mid] = (grid.centers[a[mid]] + grid.centers[b[mid]]) / 2
        valid = rng.random(grid.count) < 0.9
        field = WarpField(grid, BACKWARD, np.where(valid[:, None], coords, np.nan), valid)
        fmap = nearest_fetch(field, grid)
        d2 = ((coords[:, None, :] - grid.centers[None, :, :]) ** 2).sum(-1)
        expect = np.argmin(d2, axis=1)  # first minimum = smallest index
        assert np.array_equal(fmap.nearest_index[valid], expect[valid])
        assert np.all(fmap.nearest_index[~valid] == -1)
        ties += int((np.sum(d2 == d2.min(axis=1, keepdims=True), axis=1) > 1)[valid].sum())
    assert ties > 100


# -- 6 ----------------------------------------------------------------------

@pytest.mark.acceptance(6)
def test_bvh_matches_brute_force(backend):
    rng = np.random.default_rng(6)
    K = CameraIntrinsics(60.0, 60.0, 32.0, 32.0, 64, 64)
    yy, xx = np.mgrid[0:64, 0:64]
    depth = 2.0 + 0.3 * np.sin(xx / 5.0) * np.cos(yy / 7.0) + (xx > 40) * 0.8
    mask = rng.random((64, 64)) > 0.05
    mesh = build_mesh(DepthMap(depth, mask), K)
    assert len(mesh.triangles) <= 10_000
    origins = rng.uniform([-1, -1, -0.5], [1, 1, 0.5], size=(1000, 3))
    targets = rng.uniform([-1.5, -1.5, 1.5], [1.5, 1.5, 3.5], size=(1000, 3))
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    fast = cast_rays(mesh, origins, dirs, backend=backend)
    slow = cast_rays_brute_force(mesh, origins, dirs)
    assert fast.hit.sum() > 500
    assert np.array_equal(fast.triangle, slow.triangle)
    assert np.array_equal(fast.t, slow.t)


# -- 7 ----------------------------------------------------------------------

@pytest.mark.acceptance(7)
def test_jitter_pipeline():
    rng = np.random.default_rng(7)
    image = rng.integers(0, 256, size=(96, 128, 3), dtype=np.uint8)
    grid = make_patch_grid(96, 128, 16)
    zero = gen_jitter_field(grid, 0.0, seed=1)
    fixed = extract_fixed_patches(image, grid)
    for mode in ("token", PIXEL_BASELINE):
        for p, q in zip(apply_jitter(grid, zero, image, mode), fixed):
            assert np.array_equal(p.pixels, q.pixels)
    for s in (1.0, 5.0, 10.0, 20.0):
        field = gen_jitter_field(grid, s, seed=11)
        assert abs(np.linalg.norm(field.displacement, axis=1).max() - s) <= 1e-6
    ref = gen_jitter_field(grid, 10.0, seed=3, workers=1)
    ref_patches = apply_jitter(grid, ref, image, PIXEL_BASELINE, pixel_noise_seed=9)
    for workers in (2, 3, 8):
        other = gen_jitter_field(grid, 10.0, seed=3, workers=workers)
        assert ref.displacement.tobytes() == other.displacement.tobytes()
        patches = apply_jitter(grid, other, image, PIXEL_BASELINE, pixel_noise_seed=9)
        assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(ref_patches, patches))


# -- 8 ----------------------------------------------------------------------

@pytest.mark.acceptance(8)
def test_pixel_warp_identity(backend, K128):
    scene = gen_plane_scene(K128, 2.0, tilt_x=0.2)
    mesh = build_mesh(scene.depth, K128)
    fwd, fmask = pixel_forward_warp_image(scene.image, scene.depth, scene.rel, K128)
    assert fmask.all() and np.array_equal(fwd, scene.image)
    bwd, bmask = pixel_backward_warp_image(scene.image, mesh, scene.rel, K128)
    assert bmask.all()
    assert np.abs(bwd.astype(int) - scene.image.astype(int)).max() <= 1


@pytest.mark.acceptance(8)
@pytest.mark.parametrize("tx", [0.2, -0.2, 0.14])
def test_pixel_warp_translation_over_plane(backend, K128, tx):
    z = 2.0
    scene = gen_plane_scene(K128, z, target_pose=moved_camera((tx, 0.0, 0.0)))
    expect, _ = render_target(scene)
    band = int(math.ceil(abs(K128.fx * tx / z))) + 1
    cols = slice(0, 128 - band) if tx > 0 else slice(band, 128)
    mesh = build_mesh(scene.depth, K128)
    bwd, bmask = pixel_backward_warp_image(scene.image, mesh, scene.rel, K128)
    fwd, fmask = pixel_forward_warp_image(scene.image, scene.depth, scene.rel, K128)
    assert bmask[:, cols].all() and fmask[:, cols].all()
    shift_is_integer = float(K128.fx * tx / z).is_integer()
    for img in (bwd, fwd) if shift_is_integer else (fwd,):
        assert np.abs(img[:, cols].astype(int) - expect[:, cols].astype(int)).max() <= 1
    if not shift_is_integer:
        # bilinear sampling blends across checker edges; interiors must match
        diff = np.abs(bwd[:, cols].astype(int) - expect[:, cols].astype(int)).max(axis=2)
        u = np.arange(128)[cols] + 0.5 + K128.fx * tx / z
        edge = np.abs(((u + 8) % 16) - 8) < 1.0
        assert diff[:, ~edge].max() <= 1


# -- 9 ----------------------------------------------------------------------

@pytest.mark.acceptance(9)
def test_overlap_properties(K128):
    rng = np.random.default_rng(9)
    for _ in range(200):
        a = rng.choice(500, size=rng.integers(1, 200), replace=False)
        b = rng.choice(500, size=rng.integers(1, 200), replace=False)
        assert overlap_ratio(a, a) == 1.0
        assert overlap_ratio(a, b) == overlap_ratio(b, a)
        assert overlap_ratio(a, a + 1000) == 0.0
    scene = gen_plane_scene(K128, 2.0, target_pose=moved_camera((0.3, 0, 0)))
    pts, _ = scene_points(scene, stride=2)
    _, t_depth = render_target(scene)
    vs = visible_set(pts, scene.source_pose, K128, scene.depth)
    vt = visible_set(pts, scene.target_pose, K128, t_depth)
    assert overlap_ratio(vs, vs) == 1.0
    assert overlap_ratio(vs, vt) == overlap_ratio(vt, vs)
    assert 0.0 < overlap_ratio(vs, vt) < 1.0


@pytest.mark.acceptance(9)
@pytest.mark.parametrize("ratio,label", [
    (0.0, None), (0.0499, None), (0.05, "5-15"), (0.1499, "5-15"), (0.15, "15-25"),
    (0.2499, "15-25"), (0.25, "25-35"), (0.3499, "25-35"), (0.35, None), (1.0, None),
])
def test_overlap_bins_half_open(ratio, label):
    assert overlap_bin(ratio) == label


# -- 10 ---------------------------------------------------------------------

def random_fetch_map(rng, mode, rows=8, cols=8, l=16) -> FetchMap:
    grid = PatchGrid(l, rows, cols)
    valid = rng.random(grid.count) < 0.8
    coords = rng.uniform(-10, 140, size=(grid.count, 2)).astype(np.float32)
    coords[~valid] = np.nan
    idx = np.where(valid, rng.integers(0, grid.count, size=grid.count), -1) if mode == NEAREST \
        else np.full(grid.count, -1)
    return FetchMap(grid, grid.image_shape, mode, valid, coords, idx)


@pytest.mark.acceptance(10)
@pytest.mark.parametrize("mode", [NEAREST, ADAPTIVE, FORWARD_POSITIONS])
def test_twfm_round_trip(tmp_path, mode):
    rng = np.random.default_rng(10)
    fmap = random_fetch_map(rng, mode)
    path = tmp_path / "map.twfm"
    twio.write_fetch_map(fmap, path)
    data = path.read_bytes()
    assert len(data) == 861
    back = twio.read_fetch_map(path)
    assert back == fmap
    assert twio.fetch_map_bytes(back) == data


@pytest.mark.acceptance(10)
def test_twfm_bad_magic(tmp_path):
    fmap = random_fetch_map(np.random.default_rng(0), NEAREST)
    data = bytearray(twio.fetch_map_bytes(fmap))
    data[:4] = b"XXXX"
    path = tmp_path / "bad.twfm"
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagic):
        twio.read_fetch_map(path)
