import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectpriv.geom import (GeometryError, Intrinsics, RigidTransform, compose, homography_from_points,
                              apply_homography, invert, look_at, project, reflect, rotation_about_axis,
                              transform_point, unproject)

INTR = Intrinsics(500.0, 480.0, 319.5, 239.5, 640, 480)
unit = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3) \
    .map(lambda v: np.asarray(v) / np.linalg.norm(v))


def rigid(seed):
    rng = np.random.default_rng(seed)
    return RigidTransform(rotation_about_axis(rng.normal(size=3), rng.uniform(-np.pi, np.pi)),
                          rng.normal(size=3))


def test_unproject_examples():
    k = Intrinsics(100.0, 100.0, 319.5, 239.5, 640, 480)
    assert np.allclose(unproject((k.cx, k.cy), 1.0, k), [0, 0, 1])
    assert np.allclose(unproject((k.cx + k.fx, k.cy), 1.0, k), [1, 0, 1])
    # ((u-cx) d / fx, (v-cy) d / fy, d) with offsets of one focal length, d = 2
    assert np.allclose(unproject((k.cx + k.fx, k.cy + k.fy), 2.0, k), [2, 2, 2])


@pytest.mark.parametrize("pixel,depth", [((10, 10), 0.0), ((10, 10), -1.0), ((640, 10), 1.0)])
def test_unproject_rejects(pixel, depth):
    with pytest.raises(GeometryError):
        unproject(pixel, depth, INTR)


def test_intrinsics_invariants():
    with pytest.raises(GeometryError):
        Intrinsics(0, 1, 1, 1, 4, 4)
    with pytest.raises(GeometryError):
        Intrinsics(1, 1, 4, 1, 4, 4)


def test_transform_point_examples():
    assert np.allclose(transform_point(RigidTransform.identity(), (1, 2, 3)), [1, 2, 3])
    assert np.allclose(transform_point(RigidTransform(np.eye(3), (0, 0, 1)), (0, 0, 0)), [0, 0, 1])
    rz = RigidTransform(rotation_about_axis((0, 0, 1), np.pi / 2), np.zeros(3))
    assert np.allclose(transform_point(rz, (1, 0, 0)), [0, 1, 0], atol=1e-15)


def test_reflect_examples():
    n = (0, 0, 1)
    assert np.allclose(reflect((0, 0, -1), n), [0, 0, 1])
    assert np.allclose(reflect((1, 0, 0), n), [1, 0, 0])
    h = np.sqrt(2) / 2
    assert np.allclose(reflect((h, 0, -h), n), [h, 0, h])
    with pytest.raises(GeometryError):
        reflect((2, 0, 0), n)


def test_compose_invert_examples():
    t = rigid(1)
    assert compose(RigidTransform.identity(), t) == t
    assert invert(RigidTransform.identity()) == RigidTransform.identity()
    pts = np.random.default_rng(2).normal(size=(100, 3))
    assert np.abs(compose(invert(t), t).apply(pts) - pts).max() < 1e-9


def test_compose_order():
    a = RigidTransform(np.eye(3), (1, 0, 0))
    b = RigidTransform(rotation_about_axis((0, 0, 1), np.pi / 2), np.zeros(3))
    # b first: (1,0,0) -> (0,1,0), then shift by +x
    assert np.allclose(compose(a, b).apply((1, 0, 0)), [1, 1, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.tuples(*[st.floats(-50, 50)] * 3))
def test_inverse_round_trip(seed, p):
    t = rigid(seed)
    assert np.abs(transform_point(invert(t), transform_point(t, p)) - np.asarray(p)).max() < 1e-9
    assert t.is_rigid(1e-9)


@settings(max_examples=100, deadline=None)
@given(unit, unit)
def test_reflect_involution_and_unit(d, n):
    r = reflect(d, n)
    assert abs(np.linalg.norm(r) - 1) < 1e-9
    assert np.abs(reflect(r, n) - d).max() < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 639), st.floats(0, 479), st.floats(0.06, 19.9))
def test_unproject_project_round_trip(u, v, z):
    assert np.abs(project(unproject((u, v), z, INTR), INTR) - [u, v]).max() < 1e-6


def test_look_at_axes():
    pose = look_at((0, 0, 0), (0, 0, 2))
    assert np.allclose(pose.rotation[:, 2], [0, 0, 1])
    assert np.allclose(pose.rotation[:, 1], [0, -1, 0])  # image down is world down
    assert pose.is_rigid()
    with pytest.raises(GeometryError):
        look_at((0, 0, 0), (0, 3, 0))


def test_homography_recovers_known_map():
    h = np.array([[1.1, 0.2, 3.0], [-0.1, 0.9, 5.0], [1e-3, 2e-3, 1.0]])
    src = np.array([[0, 0], [100, 0], [100, 80], [0, 80], [40, 30.0]])
    est = homography_from_points(src, apply_homography(h, src))
    assert np.allclose(est, h, atol=1e-9)
    with pytest.raises(GeometryError):
        homography_from_points([[0, 0], [1, 1], [2, 2], [0, 5]], [[0, 0], [1, 0], [1, 1], [0, 1]])
