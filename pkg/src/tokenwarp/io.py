"""File formats: frames, depth, poses, intrinsics, fetch maps, JSON records.

Scene directory layout (ScanNet-style)::

    <scene>/color/<id>.png
    <scene>/depth/<id>.png | <id>.pfm
    <scene>/pose/<id>.txt          4x4, row-major
    <scene>/intrinsic.txt          3x3, 4x4 or "fx fy cx cy"
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import RIGID_TOL, CameraIntrinsics, CameraPose, DepthMap, PatchGrid, check_rotation
from .errors import (
    BadMagic,
    DimensionMismatch,
    NonRigidPose,
    ParseError,
    TruncatedFile,
    UnsupportedVersion,
)
from .fetch import ADAPTIVE, FORWARD_POSITIONS, NEAREST, FetchMap

C2W = "c2w"
W2C = "w2c"
DEFAULT_DEPTH_SCALE = 0.001
POSE_TOL = 1e-3

TWFM_MAGIC = b"TWFM"
TWFM_VERSION = 1
_HEADER = struct.Struct("<4s6IB")
_RECORD = np.dtype([("valid", "u1"), ("x", "<f4"), ("y", "<f4"), ("index", "<i4")])
_MODE_CODES = {NEAREST: 0, ADAPTIVE: 1, FORWARD_POSITIONS: 2}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n")


# -- images -----------------------------------------------------------------

def read_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"))
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read image {path}: {e}") from e


def _png_bytes(arr: np.ndarray) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, arr: np.ndarray) -> None:
    """8-bit RGB/gray or 16-bit single-channel PNG, written atomically."""
    atomic_write_bytes(path, _png_bytes(np.ascontiguousarray(arr)))


def write_mask_png(path, mask: np.ndarray) -> None:
    write_png(path, np.where(mask, 255, 0).astype(np.uint8))


# -- depth ------------------------------------------------------------------

def read_depth_png(path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> DepthMap:
    """16-bit PNG; value 0 is invalid, metres = value * ``depth_scale``."""
    try:
        with Image.open(path) as im:
            raw = np.array(im)
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read depth {path}: {e}") from e
    if raw.ndim != 2:
        raise ParseError(f"depth PNG {path} must be single-channel")
    raw = raw.astype(np.float64)
    return DepthMap(raw * depth_scale, mask=raw > 0)


def write_depth_png(path, depth: DepthMap, depth_scale: float = DEFAULT_DEPTH_SCALE) -> None:
    q = np.where(depth.valid, np.rint(np.where(depth.valid, depth.values, 0) / depth_scale), 0)
    if q.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range at this scale")
    write_png(path, q.astype(np.uint16))


def read_pfm(path) -> np.ndarray:
    """Single-channel PFM as a top-to-bottom float32 array."""
    data = Path(path).read_bytes()
    lines = data.split(b"\n", 3)
    if len(lines) < 4 or lines[0].strip() != b"Pf":
        raise ParseError(f"{path}: not a single-channel PFM")
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as e:
        raise ParseError(f"{path}: bad PFM header") from e
    raster = lines[3]
    if len(raster) < w * h * 4:
        raise TruncatedFile(f"{path}: PFM raster is truncated")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(raster, dtype=dtype, count=w * h).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def write_pfm(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    h, w = values.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    atomic_write_bytes(path, header + np.flipud(values).tobytes())


def read_depth_pfm(path) -> DepthMap:
    """Metres; non-positive or NaN entries are invalid."""
    return DepthMap(read_pfm(path).astype(np.float64))


def read_depth(path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> DepthMap:
    if str(path).lower().endswith(".pfm"):
        return read_depth_pfm(path)
    return read_depth_png(path, depth_scale)


# -- poses and intrinsics ---------------------------------------------------

def _read_numbers(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    try:
        return np.array([float(t) for t in text.split()], dtype=np.float64)
    except ValueError as e:
        raise ParseError(f"{path}: non-numeric content") from e


def read_pose(path, convention: str) -> CameraPose:
    """4x4 row-major pose; stored world-to-camera.

    Rotations off by more than 1e-6 but within 1e-3 are snapped to the nearest rotation.
    """
    if convention not in (C2W, W2C):
        raise ValueError(f"pose convention must be {C2W!r} or {W2C!r}")
    vals = _read_numbers(path)
    if vals.size != 16:
        raise ParseError(f"{path}: expected 16 numbers, found {vals.size}")
    T = vals.reshape(4, 4)
    if not np.all(np.isfinite(T)):
        raise ParseError(f"{path}: pose has non-finite entries")
    R = T[:3, :3]
    check_rotation(R, POSE_TOL)
    if np.abs(R.T @ R - np.eye(3)).max() > RIGID_TOL or abs(np.linalg.det(R) - 1) > RIGID_TOL:
        U, _, Vt = np.linalg.svd(R)
        T = T.copy()
        T[:3, :3] = U @ Vt
    try:
        if convention == C2W:
            return CameraPose.from_camera_to_world(T)
        return CameraPose(T[:3, :3], T[:3, 3])
    except NonRigidPose:
        raise
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def write_pose(path, pose: CameraPose, convention: str) -> None:
    if convention == W2C:
        T = pose.matrix
    else:
        T = np.eye(4)
        T[:3, :3], T[:3, 3] = pose.inverse_matrix_parts()
    lines = [" ".join(repr(float(v)) for v in row) for row in T]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_intrinsics(path, width: int, height: int) -> CameraIntrinsics:
    vals = _read_numbers(path)
    if vals.size == 4:
        fx, fy, cx, cy = vals
    elif vals.size in (9, 16):
        n = 3 if vals.size == 9 else 4
        K = vals.reshape(n, n)
        fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
    else:
        raise ParseError(f"{path}: expected 'fx fy cx cy', a 3x3 or a 4x4 matrix")
    try:
        return CameraIntrinsics(float(fx), float(fy), float(cx), float(cy), int(width), int(height))
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    atomic_write_text(path, "\n".join(" ".join(repr(float(v)) for v in row) for row in K.matrix) + "\n")


# -- frames -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrameBundle:
    frame_id: str
    image: np.ndarray | None
    depth: DepthMap | None
    pose: CameraPose
    K: CameraIntrinsics
    image_path: str | None = None
    depth_path: str | None = None


def load_frame(pose_path, intrinsics_path, pose_convention: str, image_path=None, depth_path=None,
               depth_scale: float = DEFAULT_DEPTH_SCALE, frame_id: str = "", size=None) -> FrameBundle:
    """Load one posed RGB-D frame.

    Image size comes from the image, else the depth, else ``size=(H, W)``.
    """
    image = read_rgb(image_path) if image_path is not None else None
    depth = read_depth(depth_path, depth_scale) if depth_path is not None else None
    if image is not None and depth is not None and image.shape[:2] != depth.shape:
        raise DimensionMismatch(
            f"image {image.shape[1]}x{image.shape[0]} and depth {depth.shape[1]}x{depth.shape[0]} differ")
    if image is not None:
        H, W = image.shape[:2]
    elif depth is not None:
        H, W = depth.shape
    elif size is not None:
        H, W = size
    else:
        raise ValueError("frame size unknown: give an image, a depth map or size")
    K = read_intrinsics(intrinsics_path, W, H)
    pose = read_pose(pose_path, pose_convention)
    return FrameBundle(frame_id, image, depth, pose, K,
                       None if image_path is None else str(image_path),
                       None if depth_path is None else str(depth_path))


def _find(directory: Path, frame_id: str, suffixes) -> Path | None:
    for s in suffixes:
        p = directory / f"{frame_id}{s}"
        if p.exists():
            return p
    return None


def scene_intrinsics_path(scene_dir) -> Path:
    scene_dir = Path(scene_dir)
    for p in (scene_dir / "intrinsic.txt", scene_dir / "intrinsic" / "intrinsic_color.txt",
              scene_dir / "intrinsic" / "intrinsic_depth.txt"):
        if p.exists():
            return p
    raise ParseError(f"{scene_dir}: no intrinsic.txt")


def list_frames(scene_dir) -> list[str]:
    pose_dir = Path(scene_dir) / "pose"
    if not pose_dir.is_dir():
        raise ParseError(f"{scene_dir}: missing pose/ directory")
    ids = [p.stem for p in pose_dir.glob("*.txt")]
    return sorted(ids, key=lambda s: (0, int(s)) if s.isdigit() else (1, s))


def load_scene_frame(scene_dir, frame_id: str, pose_convention: str,
                     depth_scale: float = DEFAULT_DEPTH_SCALE, need_image: bool = True,
                     need_depth: bool = True, size=None) -> FrameBundle:
    scene_dir = Path(scene_dir)
    frame_id = str(frame_id)
    image_path = _find(scene_dir / "color", frame_id, (".png", ".jpg", ".jpeg"))
    depth_path = _find(scene_dir / "depth", frame_id, (".pfm", ".png"))
    pose_path = scene_dir / "pose" / f"{frame_id}.txt"
    if not pose_path.exists():
        raise ParseError(f"{scene_dir}: no pose for frame {frame_id!r}")
    if need_image and image_path is None:
        raise ParseError(f"{scene_dir}: no color image for frame {frame_id!r}")
    if need_depth and depth_path is None:
        raise ParseError(f"{scene_dir}: no depth for frame {frame_id!r}")
    return load_frame(pose_path, scene_intrinsics_path(scene_dir), pose_convention,
                      image_path if need_image else None, depth_path if need_depth else None,
                      depth_scale, frame_id, size)


def write_scene_frame(scene_dir, frame_id: str, pose: CameraPose, K: CameraIntrinsics,
                      image: np.ndarray | None = None, depth: DepthMap | None = None,
                      depth_format: str = "png", depth_scale: float = DEFAULT_DEPTH_SCALE,
                      pose_convention: str = C2W) -> None:
    scene_dir = Path(scene_dir)
    if image is not None:
        write_png(scene_dir / "color" / f"{frame_id}.png", image)
    if depth is not None:
        if depth_format == "pfm":
            write_pfm(scene_dir / "depth" / f"{frame_id}.pfm", np.where(depth.valid, depth.values, 0.0))
        else:
            write_depth_png(scene_dir / "depth" / f"{frame_id}.png", depth, depth_scale)
    write_pose(scene_dir / "pose" / f"{frame_id}.txt", pose, pose_convention)
    write_intrinsics(scene_dir / "intrinsic.txt", K)


# -- fetch maps -------------------------------------------------------------

def fetch_map_bytes(fmap: FetchMap) -> bytes:
    H, W = fmap.image_shape
    g = fmap.grid
    header = _HEADER.pack(TWFM_MAGIC, TWFM_VERSION, g.rows, g.cols, g.patch_size, H, W,
                          _MODE_CODES[fmap.mode])
    rec = np.zeros(g.count, dtype=_RECORD)
    rec["valid"] = fmap.valid
    rec["x"] = fmap.coords[:, 0]
    rec["y"] = fmap.coords[:, 1]
    rec["index"] = fmap.nearest_index
    return header + rec.tobytes()


def fetch_map_to_json(fmap: FetchMap) -> dict:
    def num(v):
        return None if not np.isfinite(v) else float(v)

    return {
        "magic": TWFM_MAGIC.decode(), "version": TWFM_VERSION,
        "grid_rows": fmap.grid.rows, "grid_cols": fmap.grid.cols,
        "patch_size": fmap.grid.patch_size,
        "image_h": int(fmap.image_shape[0]), "image_w": int(fmap.image_shape[1]),
        "mode": fmap.mode,
        "entries": [{"valid": bool(v), "src_x": num(c[0]), "src_y": num(c[1]), "nearest_index": int(i)}
                    for v, c, i in zip(fmap.valid, fmap.coords, fmap.nearest_index)],
    }


def write_fetch_map(fmap: FetchMap, path, emit_json: bool = False) -> None:
    atomic_write_bytes(path, fetch_map_bytes(fmap))
    if emit_json:
        write_json(str(path) + ".json", fetch_map_to_json(fmap))


def parse_fetch_map(data: bytes) -> FetchMap:
    if len(data) < 4:
        raise TruncatedFile("fetch map shorter than its magic")
    if data[:4] != TWFM_MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}, expected {TWFM_MAGIC!r}")
    if len(data) < 8:
        raise TruncatedFile("fetch map header is truncated")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != TWFM_VERSION:
        raise UnsupportedVersion(f"fetch map version {version} is not supported")
    if len(data) < _HEADER.size:
        raise TruncatedFile("fetch map header is truncated")
    _, _, rows, cols, l, H, W, mode = _HEADER.unpack_from(data, 0)
    if mode not in _MODE_NAMES:
        raise ParseError(f"unknown fetch mode code {mode}")
    count = rows * cols
    need = _HEADER.size + count * _RECORD.itemsize
    if len(data) < need:
        raise TruncatedFile(f"fetch map needs {need} bytes, found {len(data)}")
    if len(data) > need:
        raise ParseError(f"fetch map has {len(data) - need} trailing bytes")
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=_HEADER.size)
    coords = np.stack([rec["x"], rec["y"]], axis=1).astype(np.float32)
    return FetchMap(PatchGrid(l, rows, cols), (H, W), _MODE_NAMES[mode], rec["valid"].astype(bool),
                    coords, rec["index"].astype(np.int32))


def read_fetch_map(path) -> FetchMap:
    return parse_fetch_map(Path(path).read_bytes())


def read_points(path) -> np.ndarray:
    """Scene points from ``.npy`` or whitespace text with three columns."""
    path = Path(path)
    try:
        pts = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read points {path}: {e}") from e
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ParseError(f"{path}: expected N x 3 points")
    pts = pts[:, :3]
    if not np.all(np.isfinite(pts)):
        raise ParseError(f"{path}: non-finite point coordinates")
    return pts
