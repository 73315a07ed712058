"""Procedural marker glyphs: block letters, triangles, stars, circles."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import MarkerOutOfBounds

# 5x7 block font, one string per row
FONT_5X7 = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
}

LABEL_BACKGROUND = (255, 255, 255)


@dataclass(frozen=True)
class Marker:
    """``kind`` is ``"text:<LETTER>"``, ``"triangle"``, ``"star"`` or ``"circle"``.

    ``size`` is the circle/triangle/star radius, or the letter height.
    """

    kind: str
    x: float
    y: float
    size: float
    color: tuple[int, int, int]

    def to_json(self) -> dict:
        d = asdict(self)
        d["color"] = list(self.color)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Marker":
        return cls(d["kind"], float(d["x"]), float(d["y"]), float(d["size"]), tuple(d["color"]))


def glyph_bitmap(letter: str) -> np.ndarray:
    try:
        rows = FONT_5X7[letter.upper()]
    except KeyError:
        raise ValueError(f"no glyph for {letter!r}") from None
    return np.array([[c == "#" for c in row] for row in rows])


def _polygon_mask(px, py, verts) -> np.ndarray:
    """Even-odd point-in-polygon on arrays of sample points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def _star_vertices(x, y, r, inner=0.4):
    ang = -np.pi / 2 + np.arange(10) * np.pi / 5
    rad = np.where(np.arange(10) % 2 == 0, r, r * inner)
    return list(zip(x + rad * np.cos(ang), y + rad * np.sin(ang)))


def _triangle_vertices(x, y, r):
    ang = -np.pi / 2 + np.arange(3) * 2 * np.pi / 3
    return list(zip(x + r * np.cos(ang), y + r * np.sin(ang)))


def marker_box(m: Marker) -> tuple[int, int, int, int]:
    """Pixel bounding box ``(x0, y0, x1, y1)``, half-open, unclipped."""
    if m.kind.startswith("text:"):
        s = max(1, int(round(m.size / 7)))
        w, h = 7 * s, 9 * s
        x0 = int(np.floor(m.x - w / 2 + 0.5))
        y0 = int(np.floor(m.y - h / 2 + 0.5))
        return x0, y0, x0 + w, y0 + h
    r = m.size
    return (int(np.floor(m.x - r)), int(np.floor(m.y - r)),
            int(np.ceil(m.x + r)) + 1, int(np.ceil(m.y + r)) + 1)


def _shape_mask(m: Marker, px, py) -> np.ndarray:
    if m.kind == "circle":
        return (px - m.x) ** 2 + (py - m.y) ** 2 <= m.size ** 2
    if m.kind == "triangle":
        return _polygon_mask(px, py, _triangle_vertices(m.x, m.y, m.size))
    if m.kind == "star":
        return _polygon_mask(px, py, _star_vertices(m.x, m.y, m.size))
    raise ValueError(f"unknown marker kind {m.kind!r}")


def _draw(out: np.ndarray, m: Marker) -> None:
    H, W = out.shape[:2]
    x0, y0, x1, y1 = marker_box(m)
    cx0, cy0, cx1, cy1 = max(x0, 0), max(y0, 0), min(x1, W), min(y1, H)
    if cx0 >= cx1 or cy0 >= cy1:
        return
    color = np.asarray(m.color, dtype=out.dtype)
    if m.kind.startswith("text:"):
        s = (x1 - x0) // 7
        glyph = glyph_bitmap(m.kind[5:])
        tile = np.zeros((y1 - y0, x1 - x0), dtype=bool)
        tile[s:8 * s, s:6 * s] = np.kron(glyph, np.ones((s, s), dtype=bool))
        region = out[cy0:cy1, cx0:cx1]
        sub = tile[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
        region[...] = np.asarray(LABEL_BACKGROUND, dtype=out.dtype)
        region[sub] = color
        return
    yy, xx = np.mgrid[cy0:cy1, cx0:cx1]
    mask = _shape_mask(m, xx + 0.5, yy + 0.5)
    out[cy0:cy1, cx0:cx1][mask] = color


def render_markers(image: np.ndarray, markers) -> np.ndarray:
    """Draw markers over a copy of ``image``; centers must lie inside it."""
    H, W = image.shape[:2]
    for m in markers:
        if not (0 <= m.x < W and 0 <= m.y < H):
            raise MarkerOutOfBounds(f"marker {m.kind} at ({m.x}, {m.y}) is outside the {W}x{H} image")
    out = image.copy()
    for m in markers:
        _draw(out, m)
    return out
