import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectpriv import envmap as em
from reflectpriv.pointcloud import ProvenancedPointCloud

RED, BLUE = (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)


def cloud(points, colors):
    n = len(points)
    return ProvenancedPointCloud(np.asarray(points, float), np.asarray(colors, np.float32),
                                 np.full(n, 2, np.uint8),
                                 np.stack([np.zeros(n), np.arange(n), np.zeros(n)], 1).astype(np.int64))


@pytest.mark.parametrize("r", [8, 9])
def test_axis_directions_hit_face_centers(r):
    for d, face in [((0, 0, 1), 4), ((1, 0, 0), 0), ((0, 1, 0), 2), ((0, 0, -1), 5)]:
        f, s, t = em.dir_to_texel(np.array(d, float), r)
        assert (int(f), int(s), int(t)) == (face, r // 2, r // 2)
    assert em.FACE_NAMES[4] == "+Z" and em.FACE_NAMES[0] == "+X"


def test_texel_mapping_bijective_r8():
    r = 8
    f, t, s = np.meshgrid(np.arange(6), np.arange(r), np.arange(r), indexing="ij")
    d = em.texel_to_dir(f, s, t, r)
    assert np.allclose(np.linalg.norm(d, axis=-1), 1.0)
    f2, s2, t2 = em.dir_to_texel(d, r)
    assert np.array_equal(f2, f) and np.array_equal(s2, s) and np.array_equal(t2, t)
    assert len({tuple(np.round(x, 12)) for x in d.reshape(-1, 3)}) == 6 * r * r == 384


def test_face_orientation():
    # +Z face: s grows toward +X, t grows toward -Y (image rows go down)
    r = 8
    right = em.texel_to_dir(4, 7, 4, r)
    below = em.texel_to_dir(4, 4, 7, r)
    assert right[0] > 0 and below[1] < 0


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: max(map(abs, v)) > 1e-3), st.integers(1, 64))
def test_direction_lands_in_its_texel(v, r):
    d = np.asarray(v) / np.linalg.norm(v)
    f, s, t = em.dir_to_texel(d, r)
    c = em.texel_to_dir(f, s, t, r)
    # the texel center is within one texel diagonal (in face-plane units) of the direction
    assert c @ d > np.cos(np.sqrt(2) * 2.0 / r * 1.01)


def test_solid_angles_sum_to_sphere():
    assert abs(em.texel_solid_angles(16).sum() - 4 * np.pi) < 1e-9


def test_single_point_splat():
    r = 64
    res = em.splat_near_field(cloud([(0, 0, 1.0)], [RED]), r, voxel=0.1)
    k = int(em.splat_radius(1.0, r, 0.1))
    assert k == 1
    f, t, s = np.nonzero(res.is_set)
    assert set(f) == {4}
    assert np.allclose([s.mean() + 0.5, t.mean() + 0.5], [r / 2, r / 2])
    assert np.all(res.cubemap.faces[res.is_set] == RED)
    assert np.all(res.source[res.is_set] == 0)


def test_splat_radius_rule():
    assert em.splat_radius(1.0, 256, 0.01) == 1
    assert em.splat_radius(0.05, 256, 0.01) == 8  # round(8.15) clamps to 8
    assert em.splat_radius(0.1, 256, 0.01) == 4  # round(4.07)
    assert em.splat_radius(100.0, 256, 0.01) == 1


def test_splat_z_buffer():
    res = em.splat_near_field(cloud([(0, 0, 2.0), (0, 0, 1.0)], [BLUE, RED]), 32)
    hit = res.is_set
    assert np.all(res.cubemap.faces[hit] == RED)
    assert np.all(res.source[hit] == 1)


def test_splat_empty_cloud():
    res = em.splat_near_field(ProvenancedPointCloud.empty(), 16)
    assert not res.is_set.any() and np.all(res.cubemap.faces == 0)


def test_splat_colors_come_from_points(fused_a):
    from reflectpriv.scene import ANCHOR
    res = em.fill_gaps(em.splat_near_field(fused_a.cloud, 64, ANCHOR), 1)
    m = res.is_set
    assert m.mean() > 0.3  # walls, floor, and ceiling within the cube
    assert np.array_equal(res.cubemap.faces[m], fused_a.cloud.colors[res.source[m]])


def test_fill_gaps_closes_holes_only():
    r = 32
    faces = np.zeros((6, r, r, 3), np.float32)
    src = np.full((6, r, r), -1)
    src[4, 8:24, 8:24] = 0
    src[4, 15, 15] = -1  # one-texel hole
    faces[4][src[4] >= 0] = 0.7
    sp = em.SplatResult(em.Cubemap(faces), np.where(src >= 0, 1.0, np.inf), src)
    out = em.fill_gaps(sp, 1)
    assert out.source[4, 15, 15] == 0 and np.allclose(out.cubemap.faces[4, 15, 15], 0.7)
    assert np.array_equal(out.is_set.sum(), sp.is_set.sum() + 1)  # the outer boundary keeps its shape
    assert np.array_equal(out.cubemap.faces[sp.is_set], faces[sp.is_set])


def test_procedural_far_field():
    empty = em.splat_near_field(ProvenancedPointCloud.empty(), 9)
    cm = em.fill_far_field(empty)
    assert np.allclose(cm.faces[2, 4, 4], 0.8)
    assert np.allclose(cm.faces[3, 4, 4], 0.3)
    assert np.all(cm.faces[..., 0] == cm.faces[..., 1])  # neutral chroma


def test_far_field_leaves_set_texels():
    rng = np.random.default_rng(1)
    full = em.SplatResult(em.Cubemap(rng.random((6, 8, 8, 3)).astype(np.float32)), np.ones((6, 8, 8)),
                          np.zeros((6, 8, 8), np.int64))
    assert em.fill_far_field(full).same_as(full.cubemap)
    half = em.SplatResult(full.cubemap, full.depth, np.where(rng.random((6, 8, 8)) < 0.5, 0, -1))
    out = em.fill_far_field(half)
    m = half.is_set
    assert np.array_equal(out.faces[m], full.cubemap.faces[m])
    assert np.all(np.isfinite(out.faces))


def test_file_far_field(tmp_path):
    from PIL import Image
    pano = np.zeros((32, 64, 3), np.uint8)
    pano[:16] = 200
    Image.fromarray(pano).save(tmp_path / "p.png")
    empty = em.splat_near_field(ProvenancedPointCloud.empty(), 16)
    cm = em.fill_far_field(empty, "file", tmp_path / "p.png")
    assert cm.faces[2].mean() > cm.faces[3].mean()
    with pytest.raises(em.EnvmapError):
        em.fill_far_field(empty, "file", tmp_path / "missing.png")


def test_prefilter_level0_and_constant():
    cm = em.Cubemap.constant(16, (0.2, 0.5, 0.9))
    levels = em.prefilter(cm, 8)
    assert len(levels) == 8 and levels[0] is cm
    for lv in levels:
        assert np.allclose(lv.faces, (0.2, 0.5, 0.9), atol=1e-6)


def test_prefilter_conserves_energy():
    r = 32
    faces = np.zeros((6, r, r, 3), np.float32)
    faces[4, 10, 20] = 50.0
    cm = em.Cubemap(faces)
    base = cm.weighted_mean()
    for lv in em.prefilter(cm, 8)[1:]:
        assert np.all(lv.faces >= 0)
        assert np.allclose(lv.weighted_mean(), base, rtol=0.01)
    last = em.prefilter(cm, 8)[-1]
    assert (last.faces[..., 0] > 0).mean() > 0.3  # spread well beyond the texel


def test_lobe_sigma():
    assert em.lobe_sigma(0, 8) == 0 and np.isclose(em.lobe_sigma(7, 8), np.pi / 4)


def test_bilinear_matches_nearest_at_texel_centers():
    rng = np.random.default_rng(2)
    cm = em.Cubemap(rng.random((6, 8, 8, 3)).astype(np.float32))
    d = em.face_directions(8).reshape(-1, 3)
    assert np.allclose(em.sample_bilinear(cm, d), em.sample(cm, d), atol=1e-6)
