import json
import subprocess
import sys

import numpy as np
import pytest

from tokenwarp import io as twio
from tokenwarp.camera import CameraIntrinsics
from tokenwarp.cli import main
from tokenwarp.synthetic import gen_plane_scene, moved_camera, render_target


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def plane_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("plane")
    assert run("synth", "--scene", "plane", "--out", out, "--emit-json") == 0
    return out


@pytest.fixture(scope="module")
def moved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("moved")
    assert run("synth", "--scene", "plane", "--out", out, "--tx", 0.2, "--depth-format", "pfm") == 0
    return out


@pytest.fixture(scope="module")
def strip_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("strip")
    assert run("synth", "--scene", "two-plane", "--out", out, "--width", 256, "--height", 256,
               "--focal", 128, "--z-near", 0.5, "--near-strip", 112, 144, "--orbit", 25, "--pivot", 1.5,
               "--depth-format", "pfm") == 0
    return out


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    """Plane seen by cameras sliding right, spanning all overlap bins."""
    out = tmp_path_factory.mktemp("sweep")
    K = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
    for i, tx in enumerate(np.linspace(0.0, 1.4, 8)):
        scene = gen_plane_scene(K, 2.0, target_pose=moved_camera((tx, 0, 0)))
        img, depth = render_target(scene)
        twio.write_scene_frame(out, str(i), scene.target_pose, K, img, depth, depth_format="pfm")
    return out


def test_synth_layout(plane_dir):
    for sub in ("color/0.png", "color/1.png", "depth/0.png", "depth/1.png", "pose/0.txt", "pose/1.txt",
                "intrinsic.txt", "scene.json"):
        assert (plane_dir / sub).exists(), sub
    d = twio.read_depth(plane_dir / "depth" / "0.png")
    assert np.all(d.values == 2.0)
    assert json.loads((plane_dir / "scene.json").read_text())["scene"] == "plane"


def test_warp_tokens_identity(plane_dir, tmp_path):
    out = tmp_path / "m.twfm"
    assert run("warp-tokens", "--scene-dir", plane_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
               "--direction", "backward", "--fetch", "nearest", "--patch-size", 16, "--out", out,
               "--emit-json") == 0
    fmap = twio.read_fetch_map(out)
    assert fmap.valid.all()
    assert np.abs(fmap.coords - fmap.grid.centers).max() <= 1e-3
    assert np.array_equal(fmap.nearest_index, np.arange(64))
    assert len(out.read_bytes()) == 861
    assert json.loads((tmp_path / "m.twfm.json").read_text())["mode"] == "nearest"


def test_warp_tokens_translation(moved_dir, tmp_path):
    out = tmp_path / "m.twfm"
    assert run("warp-tokens", "--scene-dir", moved_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
               "--direction", "backward", "--fetch", "adaptive", "--patch-size", 16, "--out", out,
               "--mosaic", tmp_path / "mosaic.png") == 0
    fmap = twio.read_fetch_map(out)
    assert fmap.mode == "adaptive"
    inner = fmap.grid.centers[:, 0] < 110
    np.testing.assert_allclose(fmap.coords[inner] - fmap.grid.centers[inner], [[10.0, 0.0]] * inner.sum(),
                               atol=1e-3)
    assert twio.read_rgb(tmp_path / "mosaic.png").shape == (128, 128, 3)


def test_warp_tokens_forward(moved_dir, tmp_path):
    out = tmp_path / "f.twfm"
    assert run("warp-tokens", "--scene-dir", moved_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
               "--direction", "forward", "--patch-size", 16, "--out", out) == 0
    fmap = twio.read_fetch_map(out)
    assert fmap.mode == "forward-positions"
    np.testing.assert_allclose(fmap.coords - fmap.grid.centers, [[-10.0, 0.0]] * 64, atol=1e-3)


def test_warp_tokens_forward_rejects_fetch(moved_dir, tmp_path):
    assert run("warp-tokens", "--scene-dir", moved_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
               "--direction", "forward", "--fetch", "adaptive", "--patch-size", 16,
               "--out", tmp_path / "x") == 1


@pytest.mark.parametrize("mode", ["forward", "backward"])
def test_warp_pixels(moved_dir, tmp_path, mode):
    out = tmp_path / f"{mode}.png"
    args = ("warp-pixels", "--scene-dir", moved_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
            "--mode", mode, "--out", out, "--emit-json")
    assert run(*args) == 0
    first = out.read_bytes()
    assert run(*args) == 0
    assert out.read_bytes() == first
    img = twio.read_rgb(out)
    expect = twio.read_rgb(moved_dir / "color" / "1.png")
    assert np.abs(img[:, :116].astype(int) - expect[:, :116].astype(int)).max() <= 1
    mask = twio.read_rgb(tmp_path / f"{mode}_mask.png")[..., 0]
    assert (mask[:, :116] == 255).all() and (mask[:, 120:] == 0).all()


def test_overlap(moved_dir, tmp_path, capsys):
    assert run("overlap", "--scene-dir", moved_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w") == 0
    rec = json.loads(capsys.readouterr().out)
    assert 0.7 < rec["overlap"] < 1.0
    assert run("overlap", "--scene-dir", moved_dir, "--source", 0, "--target", 0, "--pose-convention", "c2w",
               "--out", tmp_path / "o.json") == 0
    assert json.loads((tmp_path / "o.json").read_text())["overlap"] == 1.0


def test_pairs_deterministic(sweep_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run("pairs", "--scene-dir", sweep_dir, "--pose-convention", "c2w", "--per-bin", 1, "--seed", 7,
                   "--out", out) == 0
    assert a.read_bytes() == b.read_bytes()
    pairs = json.loads(a.read_text())
    assert [p["overlap_bin"] for p in pairs] == ["5-15", "15-25", "25-35"]


def test_annotate_and_oracle(strip_dir, tmp_path):
    inst_path = tmp_path / "i.json"
    args = ("annotate", "--scene-dir", strip_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
            "--task", "text", "--tau", 50, "--seed", 4, "--render-dir", tmp_path / "r", "--out", inst_path)
    assert run(*args) == 0
    first = inst_path.read_bytes()
    assert run(*args) == 0
    assert inst_path.read_bytes() == first
    (inst,) = json.loads(first)
    assert inst["answer"] in ("left", "right") and inst["source_frame"] == "0"
    assert (tmp_path / "r" / "0000_source.png").exists() and (tmp_path / "r" / "0000_target.png").exists()
    out = tmp_path / "o.json"
    assert run("oracle", "--scene-dir", strip_dir, "--pose-convention", "c2w", "--instances", inst_path,
               "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["accuracy"] == 1.0 and res["scored"] == 1


def test_annotate_small_gaps_emit_nothing(tmp_path):
    # a 48 px wide view cannot hold a 50 px flip gap, though smaller flips exist
    scene_dir = tmp_path / "narrow"
    assert run("synth", "--scene", "two-plane", "--out", scene_dir, "--width", 48, "--height", 48, "--focal", 24,
               "--z-near", 0.5, "--near-strip", 20, 28, "--orbit", 30, "--pivot", 1.5,
               "--depth-format", "pfm") == 0
    common = ("annotate", "--scene-dir", scene_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
              "--task", "shape", "--seed", 0, "--point-stride", 1)
    assert run(*common, "--tau", 50, "--out", tmp_path / "none.json") == 0
    assert json.loads((tmp_path / "none.json").read_text()) == []
    assert run(*common, "--tau", 5, "--out", tmp_path / "some.json") == 0
    assert len(json.loads((tmp_path / "some.json").read_text())) == 1


def test_annotate_from_pairs_file(sweep_dir, tmp_path):
    pairs = tmp_path / "p.json"
    assert run("pairs", "--scene-dir", sweep_dir, "--pose-convention", "c2w", "--per-bin", 1, "--seed", 7,
               "--out", pairs) == 0
    out = tmp_path / "i.json"
    assert run("annotate", "--scene-dir", sweep_dir, "--pairs", pairs, "--pose-convention", "c2w",
               "--task", "object", "--seed", 1, "--out", out) == 0
    insts = json.loads(out.read_text())
    assert len(insts) == 3
    assert [i["overlap_bin"] for i in insts] == ["5-15", "15-25", "25-35"]
    assert all(i["answer"] is None for i in insts)


def test_jitter(plane_dir, tmp_path):
    img = plane_dir / "color" / "0.png"
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    for out in (a, b):
        assert run("jitter", "--image", img, "--max-disp", 5, "--seed", 3, "--pixel-baseline", "--out", out,
                   "--emit-json") == 0
    assert a.read_bytes() == b.read_bytes()
    field = json.loads((tmp_path / "a.png.json").read_text())
    assert max(np.hypot(*np.array(field["displacement"]).T)) == pytest.approx(5.0, abs=1e-6)
    assert run("jitter", "--image", img, "--max-disp", 0, "--seed", 3, "--out", tmp_path / "z.png") == 0
    assert np.array_equal(twio.read_rgb(tmp_path / "z.png"), twio.read_rgb(img))


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["pairs", "--scene-dir", "x", "--pose-convention", "c2w", "--per-bin", "1"],
    ["jitter", "--image", "x.png", "--max-disp", "1", "--out", "y.png"],
    ["overlap", "--scene-dir", "x", "--source", "0", "--target", "1"],
    ["warp-tokens", "--scene-dir", "x", "--source", "0", "--target", "1", "--pose-convention", "auto",
     "--direction", "backward", "--patch-size", "16", "--out", "y"],
    ["annotate", "--scene-dir", "x", "--pose-convention", "c2w", "--task", "text", "--seed", "1"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "usage error" in capsys.readouterr().err


def test_data_errors_exit_2(plane_dir, tmp_path, capsys):
    assert run("overlap", "--scene-dir", tmp_path / "missing", "--source", 0, "--target", 1,
               "--pose-convention", "c2w") == 2
    assert run("warp-tokens", "--scene-dir", plane_dir, "--source", 0, "--target", 1, "--pose-convention", "c2w",
               "--direction", "backward", "--patch-size", 15, "--out", tmp_path / "x") == 2
    assert run("jitter", "--image", plane_dir / "color" / "0.png", "--max-disp", -1, "--seed", 0,
               "--out", tmp_path / "j.png") == 2
    (tmp_path / "junk.json").write_text("{not json")
    assert run("oracle", "--scene-dir", plane_dir, "--pose-convention", "c2w", "--instances",
               tmp_path / "junk.json") == 2
    err = capsys.readouterr().err
    assert err.count("error:") == 4


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tokenwarp", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "warp-tokens" in res.stdout
    res = subprocess.run([sys.executable, "-m", "tokenwarp", "synth"], capture_output=True, text=True)
    assert res.returncode == 1
