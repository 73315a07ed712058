import math

import numpy as np
import pytest

from helpers import K0, random_pose
from tokenwarp.camera import CameraPose, make_patch_grid
from tokenwarp.errors import NonPlanarScene
from tokenwarp.mesh import build_mesh
from tokenwarp.synthetic import (
    SyntheticScene,
    analytic_backward_oracle,
    gen_plane_scene,
    gen_two_plane_scene,
    moved_camera,
    orbit_camera,
    render_target,
    scene_points,
    trace_target,
)
from tokenwarp.viewbench import flips, warp_keypoints
from tokenwarp.warp import backward_warp_grid


def test_plane_depth_exact():
    scene = gen_plane_scene(K0, 2.0)
    assert np.all(scene.depth.values == 2.0)
    mesh = build_mesh(scene.depth, K0)
    assert np.abs(mesh.vertices[:, 2] - 2.0).max() <= 1e-9


def test_checker_period():
    scene = gen_plane_scene(K0, 2.0, period=16)
    assert not np.array_equal(scene.image[0, 0], scene.image[0, 16])
    assert np.array_equal(scene.image[0, 0], scene.image[0, 15])
    assert np.array_equal(scene.image[0, 0], scene.image[16, 16])


def test_tilted_plane_depth_varies_smoothly():
    scene = gen_plane_scene(K0, 2.0, tilt_y=0.3)
    d = scene.depth.values
    assert d[64, 64] == pytest.approx(2.0, abs=0.02)
    assert np.all(np.diff(d, axis=1) != 0)


def test_two_plane_depth_values():
    scene = gen_two_plane_scene(K0, 1.0, 4.0, 64.0)
    assert set(np.unique(scene.depth.values)) == {1.0, 4.0}
    assert np.all(scene.depth.values[:, :64] == 4.0) and np.all(scene.depth.values[:, 64:] == 1.0)


def test_two_plane_hand_flip():
    scene = gen_two_plane_scene(K0, 1.0, 4.0, 65.0, target_pose=moved_camera((0.2, 0, 0)))
    warped = warp_keypoints(np.array([[70.0, 64.0], [60.0, 64.0]]), scene.depth, scene.rel, K0)
    assert flips(70.0, 60.0, warped[0, 0], warped[1, 0], tau=1.0)


def test_two_plane_identity_no_flips():
    scene = gen_two_plane_scene(K0, 1.0, 4.0, 64.0)
    pts, pix = scene_points(scene, stride=8)
    uv = warp_keypoints(pix, scene.depth, scene.rel, K0)
    np.testing.assert_allclose(uv, pix, atol=1e-9)


def test_strip_scene_layout():
    scene = gen_two_plane_scene(K0, 0.5, 3.0, (48, 80))
    d = scene.depth.values
    assert np.all(d[:, 48:80] == 0.5) and np.all(d[:, :48] == 3.0) and np.all(d[:, 80:] == 3.0)
    assert scene.params["near_side"] == "strip"
    with pytest.raises(ValueError):
        gen_two_plane_scene(K0, 0.5, 3.0, (80, 48))
    with pytest.raises(ValueError):
        gen_two_plane_scene(K0, 3.0, 0.5, 64.0)


def test_analytic_oracle_translation_example():
    scene = gen_plane_scene(K0, 2.0, target_pose=moved_camera((0.2, 0, 0)))
    coords, ok = analytic_backward_oracle(scene, [[40.0, 40.0]])
    assert ok[0]
    np.testing.assert_allclose(coords[0], (50.0, 40.0), atol=1e-12)


def test_analytic_oracle_identity():
    scene = gen_plane_scene(K0, 2.0, tilt_x=0.2)
    g = make_patch_grid(128, 128, 16).centers
    coords, ok = analytic_backward_oracle(scene, g)
    assert ok.all()
    np.testing.assert_allclose(coords, g, atol=1e-9)


def test_oracle_matches_engine_on_random_poses(backend):
    rng = np.random.default_rng(8)
    grid = make_patch_grid(128, 128, 8)
    for _ in range(5):
        scene = gen_plane_scene(K0, 2.5, target_pose=random_pose(rng), tilt_y=rng.uniform(-0.3, 0.3))
        field = backward_warp_grid(grid, build_mesh(scene.depth, K0), scene.rel, K0, backend=backend)
        exp, ok = analytic_backward_oracle(scene, grid.centers)
        both = field.valid & ok
        assert np.abs(field.coords[both] - exp[both]).max() <= 1e-2


def test_trace_two_plane_occlusion():
    scene = gen_two_plane_scene(K0, 1.0, 4.0, 64.0, target_pose=moved_camera((0.2, 0, 0)))
    # target column 50 sees the near plane (source 70), not the far plane behind it
    coords, ok, tz, piece = trace_target(scene, [[50.0, 64.0]])
    assert ok[0] and tz[0] == pytest.approx(1.0)
    np.testing.assert_allclose(coords[0], (70.0, 64.0), atol=1e-9)


def test_render_target_identity_equals_source():
    scene = gen_two_plane_scene(K0, 1.0, 4.0, 64.0)
    img, depth = render_target(scene)
    assert np.array_equal(img, scene.image)
    np.testing.assert_allclose(depth.values, scene.depth.values, rtol=1e-12)


def test_render_target_holes():
    scene = gen_plane_scene(K0, 2.0, target_pose=moved_camera((0.2, 0, 0)))
    img, depth = render_target(scene, fill=3)
    assert not depth.valid[:, 119:].any() and depth.valid[:, :118].all()
    assert (img[:, 119:] == 3).all()


def test_non_planar_scene_rejected():
    scene = SyntheticScene(np.zeros((128, 128, 3), np.uint8), gen_plane_scene(K0, 2.0).depth, K0,
                           CameraPose.identity(), CameraPose.identity(), ())
    with pytest.raises(NonPlanarScene):
        trace_target(scene, [[1.0, 1.0]])


def test_scene_points_margin():
    scene = gen_two_plane_scene(K0, 1.0, 4.0, 64.0)
    pts, pix = scene_points(scene, stride=1, margin=3)
    assert np.all(np.abs(pix[:, 0] - 64.0) > 3)
    uv = pts[:, :2] / pts[:, 2:] * 100 + 64
    np.testing.assert_allclose(uv, pix, atol=1e-9)


def test_orbit_camera_keeps_pivot_centered():
    pose = orbit_camera(math.radians(30), 2.0)
    p = pose.apply(np.array([0.0, 0.0, 2.0]))
    assert abs(p[0]) < 1e-12 and p[2] == pytest.approx(2.0)


def test_moved_camera_convention():
    pose = moved_camera((0.2, 0, 0))
    np.testing.assert_allclose(pose.translation, (-0.2, 0, 0))
    np.testing.assert_allclose(pose.center, (0.2, 0, 0))


def test_bad_plane_depth():
    with pytest.raises(ValueError):
        gen_plane_scene(K0, 0.0)
