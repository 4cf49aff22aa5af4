import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectpriv import scene
from reflectpriv.geom import Intrinsics, RigidTransform, compose, rotation_about_axis
from reflectpriv.pointcloud import (DegenerateRegistration, FuseParams, NearFieldSpec, ProvenancedPointCloud,
                                    VoxelGridIndex, crop_near_field, frame_to_points, fuse, icp_register,
                                    kabsch, voxel_downsample)
from reflectpriv.scene import CaptureFrame, Confidence
from synth import errors, perturbation, room_corner


def one_pixel_frame(depth=1.0, conf=Confidence.HIGH, pose=RigidTransform.identity()):
    intr_d = Intrinsics(10.0, 10.0, 2.0, 1.0, 4, 3)
    d = np.zeros((3, 4))
    d[1, 2] = depth
    c = np.full((3, 4), Confidence.LOW, np.uint8)
    c[1, 2] = conf
    rgb = np.zeros((15, 20, 3), np.float32)
    rgb[7, 12] = (0.1, 0.2, 0.3)  # (u*s + s//2, v*s + s//2) for (u, v) = (2, 1)
    return CaptureFrame(4, rgb, d, c, pose, intr_d.scaled(5), intr_d)


def test_frame_to_points_single_pixel():
    pc = frame_to_points(one_pixel_frame())
    assert len(pc) == 1
    assert np.allclose(pc.positions[0], [0, 0, 1])
    assert np.allclose(pc.colors[0], [0.1, 0.2, 0.3])
    assert pc.provenance.tolist() == [[4, 2, 1]]


def test_frame_to_points_filters():
    assert len(frame_to_points(one_pixel_frame(conf=Confidence.LOW))) == 0
    assert len(frame_to_points(one_pixel_frame(depth=0.0))) == 0


def test_color_sample_position_at_full_scale():
    # s = 1280 / 256 = 5; depth pixel (20, 10) reads rgb pixel (102, 52)
    d = Intrinsics(200.0, 200.0, 127.5, 95.5, 256, 192)
    depth = np.zeros((192, 256))
    depth[10, 20] = 2.0
    conf = np.full((192, 256), Confidence.HIGH, np.uint8)
    rgb = np.zeros((960, 1280, 3), np.float32)
    rgb[52, 102] = 1.0
    f = CaptureFrame(0, rgb, depth, conf, RigidTransform.identity(), d.scaled(5), d)
    pc = frame_to_points(f)
    assert f.scale == 5 and np.array_equal(pc.colors[0], [1, 1, 1])


def test_crop_boundary_inclusive():
    c = np.array([0.0, 1.0, 0.0])
    pts = c + np.array([[0, 0, 0], [1.5, 0, 0], [1.0, 0, 0], [-1.0, 1.0, -1.0], [0, 0, -1.0001]])
    pc = ProvenancedPointCloud(pts, np.zeros((5, 3)), np.zeros(5, np.uint8),
                               np.stack([np.zeros(5), np.arange(5), np.zeros(5)], 1).astype(np.int64))
    kept = crop_near_field(pc, NearFieldSpec(tuple(c), 2.0))
    assert kept.provenance[:, 1].tolist() == [0, 2, 3]


def test_nearfield_spec_invariant():
    with pytest.raises(ValueError):
        NearFieldSpec((0, 0, 0), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.2))
def test_voxel_index_matches_brute_force(seed, max_dist):
    rng = np.random.default_rng(seed)
    tgt = rng.uniform(-1, 1, (400, 3))
    q = rng.uniform(-1.1, 1.1, (60, 3))
    d, i = VoxelGridIndex(tgt, 0.05).nearest(q, max_dist)
    full = np.linalg.norm(q[:, None] - tgt[None], axis=2)
    best = full.min(axis=1)
    within = best <= max_dist
    assert np.array_equal(i >= 0, within)
    assert np.allclose(d[within], best[within])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_kabsch_exact_and_proper(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(20, 3))
    t = perturbation(rng, 180.0, 3.0)
    est = kabsch(p, t.apply(p))
    assert est.is_rigid(1e-9)
    assert np.abs(est.apply(p) - t.apply(p)).max() < 1e-9
    # a mirrored target still yields a proper rotation
    assert kabsch(p, p * [1, 1, -1]).is_rigid(1e-9)


def test_icp_identity_fixed_point(rng):
    p = room_corner(rng)
    t = icp_register(p, p)
    assert np.abs(t.rotation - np.eye(3)).max() < 1e-9 and np.abs(t.translation).max() < 1e-9


def test_icp_recovers_small_motion(rng):
    p = room_corner(rng)
    truth = RigidTransform(rotation_about_axis((0.3, 1.0, 0.2), np.deg2rad(5)), (0.03, -0.03, 0.03))
    rot, trans = errors(icp_register(p, truth.apply(p)), truth)
    assert rot <= 0.5 and trans <= 0.005


def test_icp_degenerate():
    with pytest.raises(DegenerateRegistration):
        icp_register(np.zeros((2, 3)), np.zeros((20, 3)))
    far = np.random.default_rng(0).normal(size=(50, 3))
    with pytest.raises(DegenerateRegistration):
        icp_register(far, far + 10.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_icp_output_is_rigid(seed):
    rng = np.random.default_rng(seed)
    p = room_corner(rng, 1500)
    assert icp_register(p, perturbation(rng).apply(p)).is_rigid(1e-9)


def test_voxel_downsample_rule():
    pos = np.array([[0.001, 0.001, 0.001], [0.002, 0.002, 0.002], [0.003, 0.0, 0.0],
                    [0.004, 0.0, 0.0], [0.5, 0.5, 0.5]])
    conf = np.array([1, 2, 2, 2, 0], np.uint8)
    prov = np.array([[0, 0, 0], [3, 1, 1], [1, 5, 0], [1, 4, 9], [0, 9, 9]], np.int64)
    pc = ProvenancedPointCloud(pos, np.zeros((5, 3)), conf, prov)
    out = voxel_downsample(pc, 0.01)
    # voxel 0: best confidence 2, then lowest frame 1, then lowest (u, v) = (4, 9)
    assert sorted(map(tuple, out.provenance.tolist())) == [(0, 9, 9), (1, 4, 9)]


def test_fuse_single_frame(frames_a):
    f = frames_a[2]
    res = fuse([f], scene.ANCHOR)
    expect = voxel_downsample(crop_near_field(frame_to_points(f), NearFieldSpec(scene.ANCHOR)), 0.01)
    assert res.cloud.same_as(expect)
    assert res.corrections[f.frame_id] == RigidTransform.identity()


def test_fuse_identity_relative_pose(frames_a):
    f = frames_a[2]
    twin = CaptureFrame(9, f.rgb, f.depth, f.confidence, f.pose, f.intrinsics_rgb, f.intrinsics_depth)
    res = fuse([f, twin], scene.ANCHOR)
    c = res.corrections[9]
    assert np.abs(c.rotation - np.eye(3)).max() < 1e-6 and np.abs(c.translation).max() < 1e-6


def test_fuse_registration_reduces_error(frames_a):
    f0, f1 = frames_a[0], frames_a[1]  # both see three walls
    jitter = RigidTransform(rotation_about_axis((1, 2, 0.5), np.deg2rad(1.5)), (0.02, -0.015, 0.01))
    bad = CaptureFrame(f1.frame_id, f1.rgb, f1.depth, f1.confidence, compose(jitter, f1.pose),
                       f1.intrinsics_rgb, f1.intrinsics_depth)
    truth = crop_near_field(frame_to_points(f1), NearFieldSpec(scene.ANCHOR))

    def rmse(params):
        res = fuse([f0, bad], scene.ANCHOR, params)
        pts = crop_near_field(frame_to_points(bad).transformed(res.corrections[f1.frame_id]),
                              NearFieldSpec(scene.ANCHOR))
        key = {tuple(p): i for i, p in enumerate(truth.provenance.tolist())}
        idx = [key[tuple(p)] for p in pts.provenance.tolist() if tuple(p) in key]
        sel = [i for i, p in enumerate(pts.provenance.tolist()) if tuple(p) in key]
        return np.sqrt(np.mean(np.sum((pts.positions[sel] - truth.positions[idx]) ** 2, axis=1)))

    registered, raw = rmse(FuseParams()), rmse(FuseParams(register=False))
    assert registered < raw / 5, (registered, raw)


def test_fuse_invariants(frames_a, fused_a):
    assert fused_a.cloud.provenance_unique()
    assert all(t.is_rigid(1e-9) for t in fused_a.corrections.values())
    off = np.abs(fused_a.cloud.positions - np.asarray(scene.ANCHOR)).max()
    assert off <= 1.0
    again = fuse(frames_a, scene.ANCHOR)
    assert again.cloud.same_as(fused_a.cloud)
    assert all(again.corrections[k] == v for k, v in fused_a.corrections.items())


def test_fuse_skips_frames_without_near_field(frames_a):
    far = frames_a[-1]  # faces the far wall
    res = fuse([frames_a[2], far], scene.ANCHOR)
    assert far.frame_id in res.skipped or far.frame_id in res.corrections
    with pytest.raises(ValueError):
        fuse([], scene.ANCHOR)
