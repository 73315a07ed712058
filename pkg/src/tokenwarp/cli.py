"""Command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on data errors (unreadable or
inconsistent inputs). Messages go to standard error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io as twio
from .camera import SOURCE_TO_TARGET, CameraIntrinsics, make_patch_grid, relative_pose, unproject_pixels
from .errors import DataError
from .fetch import ADAPTIVE, NEAREST, adaptive_fetch, assemble_patches, fetch_tokens, forward_positions_map, \
    nearest_fetch
from .jitter import PIXEL_BASELINE, TOKEN_MODE, apply_jitter, gen_jitter_field
from .markers import render_markers
from .mesh import build_mesh
from .synthetic import gen_plane_scene, gen_two_plane_scene, moved_camera, orbit_camera, render_target
from .viewbench import (
    DEFAULT_OCCLUSION_TOL,
    DEFAULT_TAU,
    TASKS,
    ViewPairRecord,
    ViewSample,
    KeypointPair,
    VqaInstance,
    annotate_pair,
    bin_and_sample_pairs,
    geometry_oracle,
    overlap_bin,
    overlap_ratio,
    visible_set,
)
from .warp import BACKWARD, FORWARD, backward_warp_grid, forward_warp_grid, pixel_backward_warp_image, \
    pixel_forward_warp_image

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- shared options ---------------------------------------------------------

def _add_scene(p, pair=True, poses=True):
    p.add_argument("--scene-dir", required=True, help="ScanNet-style scene directory")
    if pair:
        p.add_argument("--source", required=True, help="source frame id")
        p.add_argument("--target", required=True, help="target frame id")
    if poses:
        p.add_argument("--pose-convention", required=True, choices=(twio.C2W, twio.W2C),
                       help="how pose files are stored (no autodetection)")
    p.add_argument("--depth-scale", type=float, default=twio.DEFAULT_DEPTH_SCALE,
                   help="meters per unit of 16-bit depth PNGs (default 0.001)")


def _add_points(p):
    p.add_argument("--points", help="scene points (.npy or 3-column text, world frame)")
    p.add_argument("--point-stride", type=int, default=4,
                   help="pixel stride when fusing points from depth (default 4)")
    p.add_argument("--occlusion-tol", type=float, default=DEFAULT_OCCLUSION_TOL,
                   help="visibility depth tolerance in meters (default 0.02)")


def _add_compute(p):
    p.add_argument("--threads", type=int, default=None, help="ray-casting threads")
    p.add_argument("--cull-ratio", type=float, default=None,
                   help="drop mesh triangles whose depth ratio exceeds this")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tokenwarp", description="Token-grid depth warping and ViewBench tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic planar scene")
    p.add_argument("--scene", required=True, choices=("plane", "two-plane"))
    p.add_argument("--out", required=True, help="output scene directory")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--focal", type=float, default=100.0)
    p.add_argument("--z", type=float, default=2.0, help="plane depth (plane scene)")
    p.add_argument("--z-near", type=float, default=1.0)
    p.add_argument("--z-far", type=float, default=3.0)
    p.add_argument("--split", type=float, default=None, help="source column where the planes meet")
    p.add_argument("--near-strip", type=float, nargs=2, metavar=("U0", "U1"), default=None,
                   help="make the near plane a strip over source columns [U0, U1) instead")
    p.add_argument("--period", type=int, default=16, help="checker period in pixels")
    p.add_argument("--tx", type=float, default=0.0, help="target camera motion, meters")
    p.add_argument("--ty", type=float, default=0.0)
    p.add_argument("--tz", type=float, default=0.0)
    p.add_argument("--yaw", type=float, default=0.0, help="target rotation, degrees")
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--roll", type=float, default=0.0)
    p.add_argument("--orbit", type=float, default=None,
                   help="swing the target camera this many degrees about a pivot instead")
    p.add_argument("--pivot", type=float, default=None, help="orbit pivot depth (default: mid-depth)")
    p.add_argument("--depth-format", choices=("png", "pfm"), default="png")
    p.add_argument("--depth-scale", type=float, default=twio.DEFAULT_DEPTH_SCALE)
    p.add_argument("--pose-convention", choices=(twio.C2W, twio.W2C), default=twio.C2W,
                   help="convention for the written pose files (default c2w)")
    p.add_argument("--emit-json", action="store_true", help="also write scene.json with parameters")

    p = sub.add_parser("warp-pixels", help="pixel-wise forward or backward warp of the source image")
    _add_scene(p)
    _add_compute(p)
    p.add_argument("--mode", required=True, choices=(FORWARD, BACKWARD))
    p.add_argument("--fill", type=int, default=0, help="value for holes")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--mask-out", help="validity mask PNG (default: <out>_mask.png)")
    p.add_argument("--emit-json", action="store_true", help="write a summary next to the output")

    p = sub.add_parser("warp-tokens", help="token-grid warp and fetch map")
    _add_scene(p)
    _add_compute(p)
    p.add_argument("--direction", required=True, choices=(FORWARD, BACKWARD))
    p.add_argument("--fetch", choices=(NEAREST, ADAPTIVE), default=None,
                   help="backward fetching strategy (default nearest)")
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--out", required=True, help="output TWFM fetch map")
    p.add_argument("--emit-json", action="store_true", help="write a JSON mirror at <out>.json")
    p.add_argument("--mosaic", help="PNG of the fetched tokens tiled on the target grid")

    p = sub.add_parser("overlap", help="visible-set IoU of a frame pair")
    _add_scene(p)
    _add_points(p)
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.add_argument("--emit-json", action="store_true", help="accepted for symmetry; output is JSON")

    p = sub.add_parser("pairs", help="bin frame pairs by overlap and sample per bin")
    _add_scene(p, pair=False)
    _add_points(p)
    p.add_argument("--frames", nargs="+", help="frame ids (default: all)")
    p.add_argument("--per-bin", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.add_argument("--emit-json", action="store_true", help="accepted for symmetry; output is JSON")

    p = sub.add_parser("annotate", help="generate VQA instances for frame pairs")
    _add_scene(p, pair=False)
    _add_points(p)
    p.add_argument("--source", help="source frame id")
    p.add_argument("--target", help="target frame id")
    p.add_argument("--pairs", help="pairs JSON written by the pairs command")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="flip gap in pixels (default 50)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--render-dir", help="write marker-annotated source/target images here")
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.add_argument("--emit-json", action="store_true", help="accepted for symmetry; output is JSON")

    p = sub.add_parser("oracle", help="answer left/right instances from geometry")
    _add_scene(p, pair=False)
    p.add_argument("--instances", required=True, help="instances JSON written by annotate")
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.add_argument("--emit-json", action="store_true", help="accepted for symmetry; output is JSON")

    p = sub.add_parser("jitter", help="re-crop tokens around randomly displaced centers")
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--max-disp", type=float, required=True, help="largest displacement s in pixels")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--neighborhood", type=int, default=9, help="smoothing window in cells (odd square)")
    p.add_argument("--pixel-baseline", action="store_true", help="add per-pixel noise after jittering")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output PNG mosaic")
    p.add_argument("--emit-json", action="store_true", help="write the displacement field to <out>.json")
    return parser


# -- helpers ----------------------------------------------------------------

def _emit(obj, out) -> None:
    if out:
        twio.write_json(out, obj)
    else:
        sys.stdout.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _frame(args, fid, need_image=True, need_depth=True):
    return twio.load_scene_frame(args.scene_dir, fid, args.pose_convention, args.depth_scale,
                                 need_image=need_image, need_depth=need_depth)


def _check_same_camera(a, b):
    if a.K != b.K:
        raise DataError(f"frames {a.frame_id} and {b.frame_id} have different resolutions")


def _fused_points(frames, stride: int) -> np.ndarray:
    """World points unprojected from every frame's depth on a pixel lattice."""
    if stride < 1:
        raise UsageError("--point-stride must be >= 1")
    parts = []
    for f in frames:
        H, W = f.depth.shape
        v, u = np.mgrid[0:H:stride, 0:W:stride]
        v, u = v.ravel(), u.ravel()
        ok = f.depth.valid[v, u]
        pix = np.stack([u[ok] + 0.5, v[ok] + 0.5], axis=1)
        X = unproject_pixels(pix, f.depth.values[v[ok], u[ok]], f.K)
        R, t = f.pose.inverse_matrix_parts()
        parts.append(X @ R.T + t)
    return np.concatenate(parts) if parts else np.zeros((0, 3))


def _points(args, frames) -> np.ndarray:
    if args.points:
        return twio.read_points(args.points)
    return _fused_points(frames, args.point_stride)


def _pair_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> None:
    K = CameraIntrinsics(args.focal, args.focal, args.width / 2, args.height / 2, args.width, args.height)
    deg = math.radians
    if args.orbit is not None:
        pivot = args.pivot if args.pivot is not None else (
            args.z if args.scene == "plane" else 0.5 * (args.z_near + args.z_far))
        target = orbit_camera(deg(args.orbit), pivot)
    else:
        target = moved_camera((args.tx, args.ty, args.tz), deg(args.yaw), deg(args.pitch), deg(args.roll))
    try:
        if args.scene == "plane":
            scene = gen_plane_scene(K, args.z, args.period, target)
        else:
            if args.near_strip is not None and args.split is not None:
                raise UsageError("give --split or --near-strip, not both")
            split = args.near_strip or (args.split if args.split is not None else args.width / 2)
            scene = gen_two_plane_scene(K, args.z_near, args.z_far, split, target, args.period)
    except ValueError as e:
        if isinstance(e, DataError):
            raise
        raise UsageError(str(e)) from e
    t_image, t_depth = render_target(scene)
    out = Path(args.out)
    kw = dict(depth_format=args.depth_format, depth_scale=args.depth_scale,
              pose_convention=args.pose_convention)
    twio.write_scene_frame(out, "0", scene.source_pose, K, scene.image, scene.depth, **kw)
    twio.write_scene_frame(out, "1", scene.target_pose, K, t_image, t_depth, **kw)
    if args.emit_json:
        twio.write_json(out / "scene.json", {
            **scene.params, "width": args.width, "height": args.height, "focal": args.focal,
            "source_frame": "0", "target_frame": "1", "pose_convention": args.pose_convention,
            "target_pose_w2c": scene.target_pose.matrix.tolist()})


def cmd_warp_pixels(args) -> None:
    src = _frame(args, args.source)
    tgt = _target_frame_for_size(args, src)
    _check_same_camera(src, tgt)
    rel = relative_pose(src.pose, tgt.pose, SOURCE_TO_TARGET)
    if args.mode == FORWARD:
        img, mask = pixel_forward_warp_image(src.image, src.depth, rel, src.K, fill=args.fill)
    else:
        mesh = build_mesh(src.depth, src.K, args.cull_ratio)
        img, mask = pixel_backward_warp_image(src.image, mesh, rel, src.K, fill=args.fill)
    twio.write_png(args.out, img)
    out = Path(args.out)
    mask_path = args.mask_out or str(out.with_name(out.stem + "_mask.png"))
    twio.write_mask_png(mask_path, mask)
    if args.emit_json:
        twio.write_json(str(out) + ".json", {
            "mode": args.mode, "source_frame": src.frame_id, "target_frame": tgt.frame_id,
            "valid_pixels": int(mask.sum()), "total_pixels": int(mask.size)})


def _target_frame_for_size(args, src):
    return twio.load_scene_frame(args.scene_dir, args.target, args.pose_convention, args.depth_scale,
                                 need_image=False, need_depth=False, size=src.K.shape)


def cmd_warp_tokens(args) -> None:
    if args.direction == FORWARD and args.fetch is not None:
        raise UsageError("--fetch applies to backward warping only")
    src = _frame(args, args.source)
    tgt = _target_frame_for_size(args, src)
    _check_same_camera(src, tgt)
    H, W = src.K.shape
    grid = make_patch_grid(H, W, args.patch_size)
    rel = relative_pose(src.pose, tgt.pose, SOURCE_TO_TARGET)
    patches = None
    if args.direction == FORWARD:
        field = forward_warp_grid(grid, src.depth, rel, src.K)
        fmap = forward_positions_map(field, (H, W))
    else:
        mesh = build_mesh(src.depth, src.K, args.cull_ratio)
        field = backward_warp_grid(grid, mesh, rel, src.K, nthreads=args.threads)
        if (args.fetch or NEAREST) == NEAREST:
            fmap = nearest_fetch(field, grid)
        else:
            fmap, patches = adaptive_fetch(field, src.image, args.patch_size)
    twio.write_fetch_map(fmap, args.out, emit_json=args.emit_json)
    if args.mosaic:
        if args.direction == FORWARD:
            raise UsageError("--mosaic needs a backward warp")
        if patches is None:
            patches = fetch_tokens(fmap, src.image)
        twio.write_png(args.mosaic, assemble_patches(patches, grid, channels=src.image.shape[2]))


def cmd_overlap(args) -> None:
    a = _frame(args, args.source, need_image=False)
    b = _frame(args, args.target, need_image=False)
    _check_same_camera(a, b)
    pts = _points(args, [a, b])
    va = visible_set(pts, a.pose, a.K, a.depth, args.occlusion_tol)
    vb = visible_set(pts, b.pose, b.K, b.depth, args.occlusion_tol)
    ratio = overlap_ratio(va, vb)
    _emit({"source_frame": a.frame_id, "target_frame": b.frame_id, "overlap": ratio,
           "overlap_bin": overlap_bin(ratio), "points": int(len(pts)),
           "visible_source": int(len(va)), "visible_target": int(len(vb))}, args.out)


def cmd_pairs(args) -> None:
    ids = args.frames or twio.list_frames(args.scene_dir)
    frames = [_frame(args, i, need_image=False) for i in ids]
    for f in frames[1:]:
        _check_same_camera(frames[0], f)
    pts = _points(args, frames)
    vis = [visible_set(pts, f.pose, f.K, f.depth, args.occlusion_tol) for f in frames]
    records = []
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            r = overlap_ratio(vis[i], vis[j])
            records.append(ViewPairRecord(frames[i].frame_id, frames[j].frame_id, r, overlap_bin(r)))
    chosen = bin_and_sample_pairs(records, args.per_bin, args.seed)
    _emit([r.to_json() for r in chosen], args.out)


def _render_instance(args, inst: VqaInstance, k: int, src, tgt) -> None:
    d = Path(args.render_dir)
    twio.write_png(d / f"{k:04d}_source.png", render_markers(src.image, inst.markers))
    twio.write_png(d / f"{k:04d}_target.png", render_markers(tgt.image, inst.target_markers))


def cmd_annotate(args) -> None:
    if args.pairs and (args.source or args.target):
        raise UsageError("give either --pairs or --source/--target")
    if args.pairs:
        try:
            pairs = [ViewPairRecord.from_json(d) for d in json.loads(Path(args.pairs).read_text())]
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise twio.ParseError(f"cannot read pairs {args.pairs}: {e}") from e
    elif args.source and args.target:
        pairs = [ViewPairRecord(args.source, args.target, float("nan"))]
    else:
        raise UsageError("annotate needs --pairs or both --source and --target")
    need_image = bool(args.render_dir)
    cache = {}

    def frame(fid):
        if fid not in cache:
            cache[fid] = _frame(args, fid, need_image=need_image)
        return cache[fid]

    out = []
    for i, rec in enumerate(pairs):
        src, tgt = frame(rec.source), frame(rec.target)
        _check_same_camera(src, tgt)
        pts = _points(args, [src, tgt])
        info = {"source_frame": src.frame_id, "target_frame": tgt.frame_id, "overlap_bin": rec.bin}
        inst = annotate_pair(pts, ViewSample(src.pose, src.depth), ViewSample(tgt.pose, tgt.depth), src.K,
                             args.task, _pair_seed(args.seed, i), args.tau, args.occlusion_tol, **info)
        if inst is None:
            continue
        if args.render_dir:
            _render_instance(args, inst, len(out), src, tgt)
        out.append(inst.to_json())
    _emit(out, args.out)


def cmd_oracle(args) -> None:
    try:
        records = json.loads(Path(args.instances).read_text())
        instances = [VqaInstance.from_json(d) for d in records]
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise twio.ParseError(f"cannot read instances {args.instances}: {e}") from e
    cache = {}

    def frame(fid, need_depth):
        key = (fid, need_depth)
        if key not in cache:
            cache[key] = _frame(args, fid, need_image=False, need_depth=need_depth)
        return cache[key]

    results, correct, scored = [], 0, 0
    for k, inst in enumerate(instances):
        if len(inst.keypoints) != 2 or inst.source_frame is None or inst.target_frame is None:
            results.append({"index": k, "task": inst.task, "oracle_answer": None, "answer": inst.answer,
                            "correct": None})
            continue
        src = frame(inst.source_frame, True)
        tgt = twio.load_scene_frame(args.scene_dir, inst.target_frame, args.pose_convention,
                                    args.depth_scale, need_image=False, need_depth=False, size=src.K.shape)
        rel = relative_pose(src.pose, tgt.pose, SOURCE_TO_TARGET)
        pred = geometry_oracle(KeypointPair(*inst.keypoints), src.depth, rel, src.K)
        ok = None if inst.answer is None else pred == inst.answer
        if ok is not None:
            scored += 1
            correct += ok
        results.append({"index": k, "task": inst.task, "oracle_answer": pred, "answer": inst.answer,
                        "correct": ok})
    _emit({"accuracy": correct / scored if scored else None, "scored": scored, "results": results},
          args.out)


def cmd_jitter(args) -> None:
    image = twio.read_rgb(args.image)
    H, W = image.shape[:2]
    grid = make_patch_grid(H, W, args.patch_size)
    try:
        field = gen_jitter_field(grid, args.max_disp, args.neighborhood, args.seed, args.workers)
    except ValueError as e:
        if isinstance(e, DataError):
            raise
        raise UsageError(str(e)) from e
    mode = PIXEL_BASELINE if args.pixel_baseline else TOKEN_MODE
    pixel_seed = _pair_seed(args.seed, 1)
    patches = apply_jitter(grid, field, image, mode, pixel_noise_seed=pixel_seed)
    twio.write_png(args.out, assemble_patches(patches, grid, channels=image.shape[2]))
    if args.emit_json:
        twio.write_json(str(args.out) + ".json", {
            "patch_size": args.patch_size, "grid_rows": grid.rows, "grid_cols": grid.cols,
            "max_displacement": field.max_displacement, "neighborhood": field.neighborhood,
            "seed": args.seed, "mode": mode, "displacement": field.displacement.tolist()})


COMMANDS = {
    "synth": cmd_synth,
    "warp-pixels": cmd_warp_pixels,
    "warp-tokens": cmd_warp_tokens,
    "overlap": cmd_overlap,
    "pairs": cmd_pairs,
    "annotate": cmd_annotate,
    "oracle": cmd_oracle,
    "jitter": cmd_jitter,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except SystemExit as e:  # --help / --version
        return e.code if isinstance(e.code, int) else EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
