import numpy as np
import pytest

from tokenwarp.errors import MarkerOutOfBounds
from tokenwarp.markers import FONT_5X7, Marker, glyph_bitmap, marker_box, render_markers


@pytest.fixture
def canvas():
    return np.full((96, 128, 3), 40, dtype=np.uint8)


def test_circle_fills_center(canvas):
    out = render_markers(canvas, [Marker("circle", 50, 40, 6, (255, 0, 0))])
    assert tuple(out[40, 50]) == (255, 0, 0)
    assert tuple(out[40, 57]) == (40, 40, 40)
    assert tuple(canvas[40, 50]) == (40, 40, 40)  # input untouched


def test_empty_list_is_identity(canvas):
    assert render_markers(canvas, []).tobytes() == canvas.tobytes()


def test_render_deterministic(canvas):
    ms = [Marker("star", 30, 30, 14, (255, 200, 0)), Marker("triangle", 90, 60, 14, (0, 200, 255)),
          Marker("text:A", 60, 20, 14, (255, 0, 0))]
    assert render_markers(canvas, ms).tobytes() == render_markers(canvas, ms).tobytes()


@pytest.mark.parametrize("kind", ["star", "triangle"])
def test_shapes_fill_their_center_and_stay_in_box(canvas, kind):
    m = Marker(kind, 64, 48, 12, (1, 2, 3))
    out = render_markers(canvas, [m])
    assert tuple(out[48, 64]) == (1, 2, 3)
    changed = np.argwhere((out != canvas).any(axis=2))
    x0, y0, x1, y1 = marker_box(m)
    assert changed[:, 1].min() >= x0 and changed[:, 1].max() < x1
    assert changed[:, 0].min() >= y0 and changed[:, 0].max() < y1


def test_star_is_smaller_than_its_circle(canvas):
    star = render_markers(canvas, [Marker("star", 64, 48, 12, (9, 9, 9))])
    circle = render_markers(canvas, [Marker("circle", 64, 48, 12, (9, 9, 9))])
    assert (star == 9).all(axis=2).sum() < (circle == 9).all(axis=2).sum()


def test_letter_on_white_label(canvas):
    out = render_markers(canvas, [Marker("text:B", 64, 48, 14, (255, 0, 0))])
    x0, y0, x1, y1 = marker_box(Marker("text:B", 64, 48, 14, (255, 0, 0)))
    assert (x1 - x0, y1 - y0) == (14, 18)
    patch = out[y0:y1, x0:x1]
    red = (patch == (255, 0, 0)).all(axis=2)
    white = (patch == 255).all(axis=2)
    assert (red | white).all()
    np.testing.assert_array_equal(red[2:16, 2:12], np.kron(glyph_bitmap("B"), np.ones((2, 2), bool)))


def test_font_covers_alphabet():
    assert sorted(FONT_5X7) == [chr(c) for c in range(ord("A"), ord("Z") + 1)]
    assert all(glyph_bitmap(c).shape == (7, 5) for c in FONT_5X7)
    with pytest.raises(ValueError):
        glyph_bitmap("?")


def test_marker_partly_outside_is_clipped(canvas):
    out = render_markers(canvas, [Marker("circle", 1, 1, 6, (255, 0, 0))])
    assert tuple(out[0, 0]) == (255, 0, 0)


@pytest.mark.parametrize("x,y", [(-1, 5), (128, 5), (5, 96), (5, -0.5)])
def test_center_outside_image_rejected(canvas, x, y):
    with pytest.raises(MarkerOutOfBounds):
        render_markers(canvas, [Marker("circle", x, y, 6, (255, 0, 0))])


def test_marker_json_round_trip():
    m = Marker("text:A", 10.5, 20.25, 14.0, (255, 0, 0))
    d = m.to_json()
    assert d == {"kind": "text:A", "x": 10.5, "y": 20.25, "size": 14.0, "color": [255, 0, 0]}
    assert Marker.from_json(d) == m


def test_unknown_kind(canvas):
    with pytest.raises(ValueError):
        render_markers(canvas, [Marker("hexagon", 10, 10, 4, (0, 0, 0))])
