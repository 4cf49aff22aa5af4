import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectpriv import attack as at
from reflectpriv import envmap as em
from reflectpriv import glyph
from reflectpriv.detect import BuiltinDetector, Region
from reflectpriv.geom import GeometryError, Intrinsics, apply_homography, homography_from_points, look_at
from reflectpriv.glyph import Kind
from reflectpriv.render import RenderView, Sphere, VirtualObject, render


def test_unwrap_identity():
    rng = np.random.default_rng(0)
    img = rng.random((30, 40, 3))
    corners = np.array([[-0.5, -0.5], [39.5, -0.5], [39.5, 29.5], [-0.5, 29.5]])
    out, valid = at.unwrap_mirror(img, np.ones((30, 40), bool), corners, (40, 30))
    assert np.abs(out - img).max() < 1e-6 and valid[1:-1, 1:-1].all()


def checkerboard(n=8, cell=16):
    return (np.indices((n * cell, n * cell)) // cell).sum(axis=0) % 2 * 1.0


def test_unwrap_checkerboard_round_trip():
    board = checkerboard()
    size = board.shape[0]
    corners = np.array([[60.0, 40.0], [250.0, 70.0], [230.0, 230.0], [50.0, 200.0]])
    rect = np.array([[0, 0], [size, 0], [size, size], [0, size]], float)
    h = homography_from_points(rect, corners)
    # forward warp by inverse mapping every output pixel into the board
    ys, xs = np.mgrid[0:260, 0:300]
    src = apply_homography(np.linalg.inv(h), np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], 1))
    inside = (src[:, 0] >= 0) & (src[:, 0] < size) & (src[:, 1] >= 0) & (src[:, 1] < size)
    img = np.zeros(xs.size)
    img[inside] = board[src[inside, 1].astype(int), src[inside, 0].astype(int)]
    img = img.reshape(xs.shape)
    out, valid = at.unwrap_mirror(img, inside.reshape(xs.shape), corners - 0.5, (size, size))
    # interior checker corners: sign changes of the board land within half a pixel
    edges = np.abs(np.diff(out > 0.5, axis=1))
    cols = np.nonzero(edges[size // 2 + 8])[0] + 1
    assert np.all(np.abs(cols - np.arange(16, size, 16)) <= 0.5 + 0.5)
    agree = (out > 0.5) == (board > 0.5)
    assert agree[valid].mean() > 0.97


def test_unwrap_collinear_corners():
    with pytest.raises(GeometryError):
        at.unwrap_mirror(np.zeros((10, 10)), np.ones((10, 10), bool),
                         np.array([[0, 0], [5, 5], [9, 9], [0, 9.0]]), (8, 8))


def test_unwrap_sphere_constant_and_empty():
    img = np.full((20, 20, 3), 0.6)
    rng = np.random.default_rng(1)
    refl = rng.normal(size=(20, 20, 3))
    refl /= np.linalg.norm(refl, axis=-1, keepdims=True)
    hit = rng.random((20, 20)) < 0.5
    pano, valid = at.unwrap_sphere(img, hit, refl, (64, 32))
    assert valid.any() and np.allclose(pano[valid], 0.6) and np.all(pano[~valid] == 0)
    pano, valid = at.unwrap_sphere(img, np.zeros((20, 20), bool), refl, (64, 32))
    assert not valid.any()


def test_latlong_conventions():
    col, row = at.latlong_index(np.array([[0, 0, 1.0], [0, 1.0, 0], [1.0, 0, 0]]), (64, 32))
    assert col[0] == 32 and row[1] == 0 and col[2] == 48
    d = at.latlong_directions((64, 32))
    c, r = at.latlong_index(d, (64, 32))
    assert np.array_equal(c, np.tile(np.arange(64), (32, 1))) and np.array_equal(r.T[0], np.arange(32))


@pytest.mark.slow
def test_sphere_unwrap_recovers_distorted_plaque():
    r = 128
    faces = np.full((6, r, r, 3), 0.4, np.float32)
    g = glyph.render_cells(glyph.encode_plaque("HELLO", Kind.TEXT), 4)
    o = (r - g.shape[0]) // 2
    faces[0, o:o + g.shape[0], o:o + g.shape[0]] = g[..., None]  # +X face
    w = 768
    v = RenderView(look_at((0, 0, 2.0), (0, 0, 0)), Intrinsics(1.2 * w, 1.2 * w, (w - 1) / 2, (w - 1) / 2, w, w), 1)
    res = render(VirtualObject(Sphere((0, 0, 0), 0.5)), [em.Cubemap(faces)], v)
    det = BuiltinDetector()
    assert not any(x.payload for x in det.detect_image(res.color, 0, res.hit))
    pano, valid = at.unwrap_sphere(res.color, res.hit, res.reflection, (512, 256))
    assert [x.payload for x in det.detect_image(pano, 0, valid)] == ["HELLO"]


class Fixed:
    """Detector returning canned regions."""

    def __init__(self, regions):
        self.regions = regions

    def __call__(self, frame_id, image):
        return self.regions


def ev(boxes):
    return at.Evidence("raw", np.zeros((10, 10, 3)), None, boxes)


def test_extract_rate_three_of_four():
    fields = [at.Field(i, f"NAME {i}", Kind.FACE) for i in range(4)]
    regions = [Region(0, (10 * i, 0, 10 * i + 5, 5), Kind.FACE, 0.9) for i in range(3)]
    boxes = {i: (10 * i, 0, 10 * i + 5, 5) for i in range(4)}
    rep = at.extract([ev(boxes)], fields, Fixed(regions))
    assert rep.rate() == 0.75 and rep.count("FACE") == 4


def test_face_needs_confidence():
    fields = [at.Field(0, "A", Kind.FACE)]
    box = {0: (0, 0, 5, 5)}
    assert at.extract([ev(box)], fields, Fixed([Region(0, (0, 0, 5, 5), Kind.FACE, 0.49)])).rate() == 0
    assert at.extract([ev(box)], fields, Fixed([Region(0, (0, 0, 5, 5), Kind.FACE, 0.5)])).rate() == 1
    assert at.extract([ev(box)], fields, Fixed([Region(0, (6, 6, 9, 9), Kind.FACE, 1.0)])).rate() == 0


@pytest.mark.parametrize("decoded,ok", [("ABCDEFGHIJ", True), ("ABCDEFGHIJKLMNOP", True), ("", False),
                                         ("ZZZZ", False)])
def test_text_success_rule(decoded, ok):
    truth = "ABCDEFGHIJKLMNOP"
    fields = [at.Field(0, truth, Kind.TEXT)]
    regs = [Region(0, (0, 0, 5, 5), Kind.TEXT, 1.0, decoded or None)]
    rep = at.extract([ev({0: (0, 0, 5, 5)})], fields, Fixed(regs))
    assert rep.records[0].success is ok


def test_distance_boundary():
    assert at.SUCCESS_DISTANCE == 10
    truth = "A" * 16
    nine, ten = "B" * 9 + "A" * 7, "B" * 10 + "A" * 6
    for s, ok in ((nine, True), (ten, False)):
        regs = [Region(0, (0, 0, 5, 5), Kind.TEXT, 1.0, s)]
        rep = at.extract([ev({0: (0, 0, 5, 5)})], [at.Field(0, truth, Kind.TEXT)], Fixed(regs))
        assert rep.records[0].distance == (9 if ok else 10) and rep.records[0].success is ok


def test_extract_needs_fields():
    with pytest.raises(ValueError):
        at.extract([ev({})], [])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.booleans(), st.floats(0, 1)), max_size=8),
       st.lists(st.tuples(st.integers(0, 3), st.booleans(), st.floats(0, 1)), max_size=8))
def test_extract_monotone(first, second):
    """Adding evidence never lowers the success rate."""
    fields = [at.Field(i, "AB", Kind.FACE if i % 2 else Kind.TEXT) for i in range(4)]
    boxes = {i: (10 * i, 0, 10 * i + 5, 5) for i in range(4)}

    def regions(spec):
        return [Region(0, boxes[i], Kind.FACE if face else Kind.TEXT, c, "AB" if c > 0.5 else None)
                for i, face, c in spec]

    class PerImage:
        def __call__(self, frame_id, image):
            return regions(first) if image[0, 0, 0] == 0 else regions(second)

    a = at.Evidence("a", np.zeros((4, 4, 3)), None, boxes)
    b = at.Evidence("b", np.ones((4, 4, 3)), None, boxes)
    one = at.extract([a], fields, PerImage()).rate()
    both = at.extract([a, b], fields, PerImage()).rate()
    assert both >= one


def test_label_boxes():
    lab = np.full((10, 10), -1)
    lab[2:5, 3:7] = 0
    lab[8, 9] = 4
    assert at.label_boxes(lab) == {0: (3, 2, 7, 5), 4: (9, 8, 10, 9)}


def test_report_table_and_json():
    rec = at.FieldRecord(0, "A", "TEXT", "A", 0, True, True, "raw", "a/mirror/undefended")
    rep = at.ExtractionReport([rec])
    assert "100.00%" in rep.table() and '"TEXT": 1.0' in rep.to_json()
