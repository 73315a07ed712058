"""Turning warp fields into token plans: nearest and adaptive fetching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import PatchGrid, make_patch_grid
from .errors import DimensionMismatch
from .warp import BACKWARD, FORWARD, WarpField

NEAREST = "nearest"
ADAPTIVE = "adaptive"
FORWARD_POSITIONS = "forward-positions"
MODES = (NEAREST, ADAPTIVE, FORWARD_POSITIONS)


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray
    center: tuple[float, float]


@dataclass(frozen=True, eq=False)
class FetchMap:
    """Per-target-cell fetch plan.

    ``coords`` are float32 source positions (NaN when invalid) and
    ``nearest_index`` is the source token index, or -1 when absent.
    ``image_shape`` is the source image size.
    """

    grid: PatchGrid
    image_shape: tuple[int, int]
    mode: str
    valid: np.ndarray
    coords: np.ndarray
    nearest_index: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown fetch mode {self.mode!r}")
        M = self.grid.count
        valid = np.asarray(self.valid, dtype=bool)
        coords = np.asarray(self.coords, dtype=np.float32)
        idx = np.asarray(self.nearest_index, dtype=np.int32)
        if valid.shape != (M,) or coords.shape != (M, 2) or idx.shape != (M,):
            raise DimensionMismatch("fetch map arrays do not match the grid")
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "nearest_index", idx)

    def __eq__(self, other):
        if not isinstance(other, FetchMap):
            return NotImplemented
        return (self.grid == other.grid and tuple(self.image_shape) == tuple(other.image_shape)
                and self.mode == other.mode
                and self.valid.tobytes() == other.valid.tobytes()
                and self.coords.tobytes() == other.coords.tobytes()
                and self.nearest_index.tobytes() == other.nearest_index.tobytes())

    __hash__ = None


def nearest_indices(coords: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Row-major index of the Euclidean-nearest grid center.

    The grid is separable, so the nearest center is found per axis; exact
    ties go to the lower row/column, which is also the smaller index.
    """
    l = grid.patch_size
    col = np.ceil(coords[:, 0] / l - 1.0)
    row = np.ceil(coords[:, 1] / l - 1.0)
    col = np.clip(col, 0, grid.cols - 1).astype(np.int64)
    row = np.clip(row, 0, grid.rows - 1).astype(np.int64)
    return row * grid.cols + col


def _check_backward(field: WarpField):
    if field.direction != BACKWARD:
        raise ValueError("fetching needs a backward warp field")


def nearest_fetch(field: WarpField, src_grid: PatchGrid) -> FetchMap:
    _check_backward(field)
    valid = field.valid.copy()
    idx = np.full(field.grid.count, -1, dtype=np.int64)
    if valid.any():
        idx[valid] = nearest_indices(field.coords[valid], src_grid)
    coords = np.where(valid[:, None], field.coords, np.nan)
    return FetchMap(field.grid, src_grid.image_shape, NEAREST, valid, coords, idx)


def window_start(center: float, l: int) -> int:
    """First pixel of the l-wide window centered at ``center``: ``round(center - l/2)``, halves up."""
    return int(np.floor(center - l / 2.0 + 0.5))


def crop_patch(image: np.ndarray, center, l: int) -> np.ndarray:
    """l x l crop centered at a continuous coordinate, border-replicated."""
    H, W = image.shape[:2]
    x0 = window_start(center[0], l)
    y0 = window_start(center[1], l)
    cols = np.clip(np.arange(x0, x0 + l), 0, W - 1)
    rows = np.clip(np.arange(y0, y0 + l), 0, H - 1)
    return image[rows[:, None], cols[None, :]]


def adaptive_fetch(field: WarpField, image: np.ndarray, l: int | None = None):
    """Re-patchify the source image around each warped coordinate.

    Returns ``(fetch_map, patches)`` with one entry per target cell;
    patches of invalid cells are ``None``.
    """
    _check_backward(field)
    l = field.grid.patch_size if l is None else l
    if l != field.grid.patch_size:
        raise DimensionMismatch(f"patch size {l} does not match the grid ({field.grid.patch_size})")
    patches: list[Patch | None] = []
    for j in range(field.grid.count):
        if not field.valid[j]:
            patches.append(None)
            continue
        c = (float(field.coords[j, 0]), float(field.coords[j, 1]))
        patches.append(Patch(crop_patch(image, c, l), c))
    coords = np.where(field.valid[:, None], field.coords, np.nan)
    fmap = FetchMap(field.grid, image.shape[:2], ADAPTIVE, field.valid.copy(), coords,
                    np.full(field.grid.count, -1))
    return fmap, patches


def forward_positions_map(field: WarpField, image_shape) -> FetchMap:
    """Record forward-warped token positions in the fetch-map container."""
    if field.direction != FORWARD:
        raise ValueError("expected a forward warp field")
    coords = np.where(field.valid[:, None], field.coords, np.nan)
    return FetchMap(field.grid, tuple(image_shape), FORWARD_POSITIONS, field.valid.copy(), coords,
                    np.full(field.grid.count, -1))


def extract_fixed_patches(image: np.ndarray, grid: PatchGrid) -> list[Patch]:
    if image.shape[:2] != grid.image_shape:
        raise DimensionMismatch(
            f"image is {image.shape[0]}x{image.shape[1]}, grid expects {grid.image_shape}")
    l = grid.patch_size
    out = []
    for j, (x, y) in enumerate(grid.centers):
        r, k = grid.cell(j)
        out.append(Patch(image[r * l:(r + 1) * l, k * l:(k + 1) * l].copy(), (float(x), float(y))))
    return out


def assemble_patches(patches, grid: PatchGrid, fill=0, channels: int = 3, dtype=np.uint8) -> np.ndarray:
    """Tile patches back into an image in grid order; ``None`` cells get ``fill``."""
    l = grid.patch_size
    H, W = grid.image_shape
    out = np.full((H, W, channels), fill, dtype=dtype)
    for j, p in enumerate(patches):
        if p is None:
            continue
        r, k = grid.cell(j)
        out[r * l:(r + 1) * l, k * l:(k + 1) * l] = p.pixels.reshape(l, l, -1)
    return out


def fetch_tokens(fmap: FetchMap, image: np.ndarray) -> list[Patch | None]:
    """Materialize the patch each target cell receives under a fetch map."""
    l = fmap.grid.patch_size
    if fmap.mode == NEAREST:
        src = extract_fixed_patches(image, make_patch_grid(image.shape[0], image.shape[1], l))
        return [src[i] if ok else None for ok, i in zip(fmap.valid, fmap.nearest_index)]
    if fmap.mode == ADAPTIVE:
        return [Patch(crop_patch(image, c, l), (float(c[0]), float(c[1]))) if ok else None
                for ok, c in zip(fmap.valid, fmap.coords.astype(np.float64))]
    raise ValueError("forward-position maps carry no fetch plan")
