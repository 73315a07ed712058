"""Smoothed random fetch-position perturbations for patch grids."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .camera import PatchGrid
from .errors import DimensionMismatch, NegativeScale
from .fetch import Patch, crop_patch, window_start
from .warp import sample_bilinear

TOKEN_MODE = "token"
PIXEL_BASELINE = "pixel-baseline"
PIXEL_NOISE_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class JitterField:
    displacement: np.ndarray  # (M, 2) pixels
    max_displacement: float
    neighborhood: int
    seed: int | None


def _cell_normals(seed: int, cells: range) -> np.ndarray:
    out = np.empty((len(cells), 2))
    for n, i in enumerate(cells):
        out[n] = np.random.default_rng(np.random.SeedSequence([seed, i])).standard_normal(2)
    return out


def sample_raw_field(count: int, seed: int, workers: int = 1) -> np.ndarray:
    """i.i.d. standard normal (dx, dy) per cell, keyed on (seed, cell index)."""
    if workers <= 1 or count < 2:
        return _cell_normals(seed, range(count))
    bounds = np.linspace(0, count, min(workers, count) + 1).astype(int)
    chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda r: _cell_normals(seed, r), chunks))
    return np.concatenate(parts)


def box_mean(values: np.ndarray, k: int) -> np.ndarray:
    """k x k mean over (rows, cols, C), averaging only in-grid neighbours."""
    r = k // 2
    padded = np.pad(values, ((r, r), (r, r), (0, 0)))
    ones = np.pad(np.ones(values.shape[:2]), r)
    sums = sliding_window_view(padded, (k, k), axis=(0, 1)).sum(axis=(-2, -1))
    counts = sliding_window_view(ones, (k, k)).sum(axis=(-2, -1))
    return sums / counts[..., None]


def gen_jitter_field(grid: PatchGrid, max_displacement: float, neighborhood: int = 9,
                     seed: int = 0, workers: int = 1, raw: np.ndarray | None = None) -> JitterField:
    """Gaussian draw, box smoothing, normalize by the largest vector, scale.

    ``raw`` replaces the random draw (shape ``(M, 2)``). The largest
    displacement has length exactly ``max_displacement`` unless the smoothed
    field is identically zero.
    """
    if max_displacement < 0:
        raise NegativeScale(f"max displacement must be >= 0, got {max_displacement}")
    k = math.isqrt(neighborhood)
    if k * k != neighborhood or k % 2 == 0:
        raise ValueError(f"neighborhood must be an odd square cell count, got {neighborhood}")
    M = grid.count
    if raw is None:
        raw = sample_raw_field(M, seed, workers)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (M, 2):
        raise DimensionMismatch(f"raw field must be ({M}, 2), got {raw.shape}")

    smooth = box_mean(raw.reshape(grid.rows, grid.cols, 2), k).reshape(M, 2)
    peak = np.linalg.norm(smooth, axis=1).max()
    if max_displacement == 0 or peak == 0:
        disp = np.zeros((M, 2))
    else:
        disp = smooth / peak * max_displacement
    return JitterField(disp, float(max_displacement), neighborhood, seed)


def _pixel_noise(l: int, bound: float, seed: int, cell: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, cell]))
    mag = rng.uniform(0.0, bound, size=(l, l))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=(l, l))
    return np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=-1)


def apply_jitter(grid: PatchGrid, field: JitterField, image: np.ndarray,
                 mode: str = TOKEN_MODE, pixel_noise_seed: int = 0) -> list[Patch]:
    """Crop every patch around its displaced center.

    In ``pixel-baseline`` mode each pixel of each crop is additionally
    resampled (bilinearly) at an offset of uniform direction and length up to
    10% of the field's maximum displacement.
    """
    if field.displacement.shape != (grid.count, 2):
        raise DimensionMismatch("jitter field does not match the grid")
    if image.shape[:2] != grid.image_shape:
        raise DimensionMismatch("image does not match the grid")
    if mode not in (TOKEN_MODE, PIXEL_BASELINE):
        raise ValueError(f"unknown jitter mode {mode!r}")
    l = grid.patch_size
    bound = PIXEL_NOISE_FRACTION * field.max_displacement
    centers = grid.centers + field.displacement
    out = []
    for j, c in enumerate(centers):
        c = (float(c[0]), float(c[1]))
        if mode == TOKEN_MODE or bound == 0:
            out.append(Patch(crop_patch(image, c, l), c))
            continue
        x0, y0 = window_start(c[0], l), window_start(c[1], l)
        yy, xx = np.mgrid[0:l, 0:l]
        pos = np.stack([x0 + xx + 0.5, y0 + yy + 0.5], axis=-1).astype(np.float64)
        pos = pos + _pixel_noise(l, bound, pixel_noise_seed, j)
        vals = sample_bilinear(image, pos.reshape(-1, 2))
        pix = np.clip(np.rint(vals), 0, 255).astype(image.dtype).reshape(l, l, *image.shape[2:])
        out.append(Patch(pix, c))
    return out
