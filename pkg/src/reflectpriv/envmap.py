"""Cubemap environment maps built from a fused near-field cloud.

Face order is +X, -X, +Y, -Y, +Z, -Z. Texel (s, t) is column s, row t of a
face, stored as ``faces[face, t, s]``. With sc = 2(s + 0.5)/R - 1 and
tc = 2(t + 0.5)/R - 1 the texel-center direction (before normalizing) is

    +X  ( 1,  -tc, -sc)      -X  (-1,  -tc,  sc)
    +Y  ( sc,   1,  tc)      -Y  ( sc,  -1, -tc)
    +Z  ( sc, -tc,   1)      -Z  (-sc, -tc,  -1)

which is the usual OpenGL cube-map layout in a +Y-up world.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .pointcloud import ProvenancedPointCloud

FACE_NAMES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")


class EnvmapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Cubemap:
    faces: np.ndarray  # (6, R, R, 3) float32, linear HDR
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        f = self.faces
        if f.ndim != 4 or f.shape[0] != 6 or f.shape[1] != f.shape[2] or f.shape[3] != 3:
            raise EnvmapError(f"cubemap faces must be (6, R, R, 3), got {f.shape}")

    @property
    def resolution(self) -> int:
        return self.faces.shape[1]

    @classmethod
    def constant(cls, r: int, color, center=(0.0, 0.0, 0.0)) -> "Cubemap":
        faces = np.empty((6, r, r, 3), np.float32)
        faces[:] = np.asarray(color, np.float32)
        return cls(faces, tuple(center))

    def same_as(self, other: "Cubemap") -> bool:
        return np.array_equal(self.faces, other.faces) and tuple(self.center) == tuple(other.center)

    def weighted_mean(self) -> np.ndarray:
        w = texel_solid_angles(self.resolution)
        return np.einsum("fts,ftsc->c", w, self.faces.astype(np.float64)) / w.sum()


def _face_coords(face, sc, tc):
    one = np.ones_like(sc)
    table = [
        (one, -tc, -sc), (-one, -tc, sc),
        (sc, one, tc), (sc, -one, -tc),
        (sc, -tc, one), (-sc, -tc, -one),
    ]
    out = np.empty(np.shape(sc) + (3,))
    for f, (x, y, z) in enumerate(table):
        m = face == f
        out[m] = np.stack([x[m], y[m], z[m]], axis=-1)
    return out


def texel_to_dir(face, s, t, r: int) -> np.ndarray:
    """Unit direction through the center of texel (s, t) on ``face``."""
    face, s, t = np.broadcast_arrays(np.asarray(face), np.asarray(s), np.asarray(t))
    sc = 2.0 * (s + 0.5) / r - 1.0
    tc = 2.0 * (t + 0.5) / r - 1.0
    d = _face_coords(face, sc, tc)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def dir_to_face_coords(dirs, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Face index and continuous (s, t) in [0, R]; texel (s, t) spans [s, s + 1)."""
    d = np.asarray(dirs, dtype=np.float64)
    a = np.abs(d)
    if np.any(a.max(axis=-1) == 0) or not np.all(np.isfinite(d)):
        raise EnvmapError("direction must be a finite nonzero vector")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    ax = np.argmax(a, axis=-1)
    face = np.where(ax == 0, np.where(x > 0, 0, 1),
                    np.where(ax == 1, np.where(y > 0, 2, 3), np.where(z > 0, 4, 5)))
    ma = np.take_along_axis(a, ax[..., None], axis=-1)[..., 0]
    sc = np.select([face == 0, face == 1, face == 5], [-z, z, -x], x) / ma
    tc = np.select([face == 2, face == 3], [z, -z], -y) / ma
    return face, (sc + 1.0) * 0.5 * r, (tc + 1.0) * 0.5 * r


def dir_to_texel(dirs, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(face, s, t) of the texel containing each direction."""
    face, s, t = dir_to_face_coords(dirs, r)
    s = np.clip(np.floor(s), 0, r - 1).astype(np.int64)
    t = np.clip(np.floor(t), 0, r - 1).astype(np.int64)
    return face, s, t


def sample_bilinear(cm: Cubemap, dirs) -> np.ndarray:
    """Bilinear lookup between texel centers, clamped at face borders."""
    r = cm.resolution
    face, s, t = dir_to_face_coords(dirs, r)
    u = np.clip(s - 0.5, 0.0, r - 1.0)
    v = np.clip(t - 0.5, 0.0, r - 1.0)
    u0 = np.minimum(np.floor(u).astype(np.int64), r - 2) if r > 1 else np.zeros(u.shape, np.int64)
    v0 = np.minimum(np.floor(v).astype(np.int64), r - 2) if r > 1 else np.zeros(v.shape, np.int64)
    u1, v1 = np.minimum(u0 + 1, r - 1), np.minimum(v0 + 1, r - 1)
    fu, fv = (u - u0)[..., None], (v - v0)[..., None]
    f = cm.faces.astype(np.float64)
    top = f[face, v0, u0] * (1 - fu) + f[face, v0, u1] * fu
    bot = f[face, v1, u0] * (1 - fu) + f[face, v1, u1] * fu
    return top * (1 - fv) + bot * fv


def face_directions(r: int) -> np.ndarray:
    """(6, R, R, 3) texel-center directions."""
    f, t, s = np.meshgrid(np.arange(6), np.arange(r), np.arange(r), indexing="ij")
    return texel_to_dir(f, s, t, r)


def texel_solid_angles(r: int) -> np.ndarray:
    """(6, R, R) exact solid angle of each texel; sums to 4*pi."""
    e = np.linspace(-1.0, 1.0, r + 1)
    x, y = np.meshgrid(e, e, indexing="xy")
    f = np.arctan2(x * y, np.sqrt(x * x + y * y + 1.0))
    w = f[1:, 1:] - f[:-1, 1:] - f[1:, :-1] + f[:-1, :-1]
    return np.broadcast_to(np.abs(w), (6, r, r)).copy()


def sample(cm: Cubemap, dirs) -> np.ndarray:
    """Nearest-texel lookup along each direction."""
    f, s, t = dir_to_texel(dirs, cm.resolution)
    return cm.faces[f, t, s]


# ---------------------------------------------------------------------------
# near field

@dataclass(frozen=True, eq=False)
class SplatResult:
    cubemap: Cubemap
    depth: np.ndarray   # (6, R, R), inf where unset
    source: np.ndarray  # (6, R, R) int64 point index, -1 where unset

    @property
    def is_set(self) -> np.ndarray:
        return self.source >= 0


def splat_radius(dist, r: int, voxel: float) -> np.ndarray:
    return np.clip(np.round(voxel * r / (2 * np.pi * np.asarray(dist))), 1, 8).astype(np.int64)


def splat_near_field(pc: ProvenancedPointCloud, r: int = 256, center=(0.0, 0.0, 0.0),
                     voxel: float = 0.01) -> SplatResult:
    """Z-buffered disk splats of every point onto the cubemap around ``center``.

    A disk covers the texels whose centers lie strictly within its radius
    of the point's exact projection, on the face that projection lands on.
    Equal depths go to the lower point index.
    """
    center = tuple(float(c) for c in center)
    faces = np.zeros((6, r, r, 3), np.float32)
    depth = np.full((6, r, r), np.inf)
    source = np.full((6, r, r), -1, np.int64)
    rel = pc.positions - np.asarray(center)
    dist = np.linalg.norm(rel, axis=1)
    keep = np.nonzero(dist > 0)[0]
    if len(keep) == 0:
        return SplatResult(Cubemap(faces, center), depth, source)
    f, ps, pt = dir_to_face_coords(rel[keep], r)
    rad = splat_radius(dist[keep], r, voxel)
    keys, dd, ii = [], [], []
    for k in np.unique(rad):
        sel = np.nonzero(rad == k)[0]
        g = np.arange(-k - 1, k + 1)
        off = np.stack(np.meshgrid(g, g, indexing="xy"), axis=-1).reshape(-1, 2)
        s0 = np.floor(ps[sel]).astype(np.int64)
        t0 = np.floor(pt[sel]).astype(np.int64)
        ss = s0[:, None] + off[None, :, 0]
        tt = t0[:, None] + off[None, :, 1]
        d2 = (ss + 0.5 - ps[sel, None]) ** 2 + (tt + 0.5 - pt[sel, None]) ** 2
        ok = (d2 < k * k) & (ss >= 0) & (ss < r) & (tt >= 0) & (tt < r)
        ff = np.broadcast_to(f[sel, None], ss.shape)
        keys.append(((ff * r + tt) * r + ss)[ok])
        dd.append(np.broadcast_to(dist[keep][sel, None], ss.shape)[ok])
        ii.append(np.broadcast_to(keep[sel, None], ss.shape)[ok])
    keys, dd, ii = np.concatenate(keys), np.concatenate(dd), np.concatenate(ii)
    order = np.lexsort((ii, dd, keys))
    first = np.ones(len(order), bool)
    first[1:] = keys[order][1:] != keys[order][:-1]
    win = order[first]
    flat = keys[win]
    depth.reshape(-1)[flat] = dd[win]
    source.reshape(-1)[flat] = ii[win]
    faces.reshape(-1, 3)[flat] = pc.colors[ii[win]]
    return SplatResult(Cubemap(faces, center), depth, source)


def fill_gaps(splat: SplatResult, radius: int = 1) -> SplatResult:
    """Close small holes between splats by copying the nearest set texel.

    Only texels inside the morphological closing of the set mask are
    filled, so isolated disks and outer boundaries keep their shape. A
    filled texel inherits the color, depth, and source point of the set
    texel it copies.
    """
    if radius <= 0:
        return splat
    faces = splat.cubemap.faces.copy()
    depth = splat.depth.copy()
    source = splat.source.copy()
    st = _disk_mask(radius)
    for k in range(6):
        m = source[k] >= 0
        if not m.any() or m.all():
            continue
        pad = radius + 1
        closed = ndimage.binary_closing(np.pad(m, pad), st)[pad:-pad, pad:-pad]
        holes = closed & ~m
        if not holes.any():
            continue
        _, (iy, ix) = ndimage.distance_transform_edt(~m, return_indices=True)
        hy, hx = iy[holes], ix[holes]
        faces[k][holes] = faces[k][hy, hx]
        depth[k][holes] = depth[k][hy, hx]
        source[k][holes] = source[k][hy, hx]
    return SplatResult(Cubemap(faces, splat.cubemap.center), depth, source)


def _disk_mask(radius: int) -> np.ndarray:
    g = np.arange(-radius, radius + 1)
    return g[:, None] ** 2 + g[None, :] ** 2 <= radius * radius


# ---------------------------------------------------------------------------
# far field

class FarField(str, enum.Enum):
    PROCEDURAL = "procedural"
    FILE = "file"


def procedural_sky(dirs: np.ndarray) -> np.ndarray:
    """Neutral vertical gradient: 0.8 straight up, 0.3 straight down."""
    g = 0.55 + 0.25 * dirs[..., 1]
    return np.repeat(g[..., None], 3, axis=-1)


def load_panorama(path) -> np.ndarray:
    """Equirectangular image as linear float (H, W, 3).

    ``.npy`` holds linear HDR floats; other formats are read as 8-bit sRGB.
    """
    path = Path(path)
    try:
        if path.suffix.lower() == ".npy":
            img = np.load(path).astype(np.float64)
        else:
            from PIL import Image

            from .color import srgb_to_linear
            with Image.open(path) as im:
                img = srgb_to_linear(np.asarray(im.convert("RGB")) / 255.0)
    except (OSError, ValueError) as e:
        raise EnvmapError(f"cannot read panorama {path}: {e}") from e
    if img.ndim != 3 or img.shape[2] != 3 or not np.all(np.isfinite(img)):
        raise EnvmapError(f"panorama {path} must be a finite (H, W, 3) image")
    return np.maximum(img, 0.0)


def equirect_lookup(pano: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Nearest sample; longitude 0 at +Z increasing toward +X, +Y at the top row."""
    h, w = pano.shape[:2]
    lon = np.arctan2(dirs[..., 0], dirs[..., 2])
    lat = np.arccos(np.clip(dirs[..., 1], -1.0, 1.0))
    u = np.floor((lon / (2 * np.pi) + 0.5) * w).astype(np.int64) % w
    v = np.clip(np.floor(lat / np.pi * h).astype(np.int64), 0, h - 1)
    return pano[v, u]


def fill_far_field(splat: SplatResult, mode: FarField | str = FarField.PROCEDURAL,
                   panorama=None) -> Cubemap:
    """Fill unset texels; set texels are copied through untouched.

    FILE mode blurs the panorama by sigma = R/32 texels worth of angle
    before sampling, so the blur does not depend on where the holes are.
    """
    mode = FarField(mode)
    cm = splat.cubemap
    r = cm.resolution
    hole = ~splat.is_set
    out = cm.faces.copy()
    if not hole.any():
        return Cubemap(out, cm.center)
    dirs = face_directions(r)[hole]
    if mode is FarField.PROCEDURAL:
        fill = procedural_sky(dirs)
    else:
        if panorama is None:
            raise EnvmapError("FILE far field needs a panorama path")
        pano = load_panorama(panorama)
        h, w = pano.shape[:2]
        sigma_rad = (r / 32.0) * (np.pi / 2) / r
        sig = (sigma_rad * h / np.pi, sigma_rad * w / (2 * np.pi), 0)
        pano = ndimage.gaussian_filter(pano, sig, mode=("nearest", "wrap", "nearest"))
        fill = equirect_lookup(pano, dirs)
    out[hole] = fill.astype(np.float32)
    return Cubemap(out, cm.center)


# ---------------------------------------------------------------------------
# prefiltering

def lobe_sigma(level: int, levels: int) -> float:
    return 0.0 if levels <= 1 else level / (levels - 1) * (np.pi / 4)


def _downsample(faces: np.ndarray, w: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Solid-angle-weighted k x k block average."""
    _, r, _, c = faces.shape
    n = r // k
    wf = (faces * w[..., None]).reshape(6, n, k, n, k, c).sum(axis=(2, 4))
    ws = w.reshape(6, n, k, n, k).sum(axis=(2, 4))
    return wf / ws[..., None], ws


def _convolve(faces: np.ndarray, omega: np.ndarray, sigma: float, chunk: int = 1024) -> np.ndarray:
    r = faces.shape[1]
    d = face_directions(r).reshape(-1, 3)
    x = faces.reshape(-1, 3).astype(np.float64)
    om = omega.reshape(-1)
    n_exp = 1.0 / sigma ** 2
    out = np.empty_like(x)
    for a in range(0, len(d), chunk):
        cos = d[a:a + chunk] @ d.T
        k = np.where(cos > 0, np.maximum(cos, 0.0) ** n_exp, 0.0) * om
        out[a:a + chunk] = (k @ x) / k.sum(axis=1, keepdims=True)
    return out.reshape(faces.shape)


def _level_resolution(r: int, sigma: float) -> int:
    """Coarsest power-of-two divisor of R whose texels are at most sigma/2 wide."""
    need = np.pi / sigma
    res = r
    while res % 2 == 0 and res // 2 >= need:
        res //= 2
    return res


def prefilter(cm: Cubemap, levels: int = 8) -> list[Cubemap]:
    """Cosine-lobe blurred copies; level l has angular width (l / (L-1)) * pi/4.

    Level 0 is the input object itself. Blurred levels keep the reduced
    face resolution they are computed at (texels at most sigma/2 wide);
    sample them with ``sample_bilinear``.
    """
    if levels < 1:
        raise EnvmapError("need at least one prefilter level")
    r = cm.resolution
    w = texel_solid_angles(r)
    src = cm.faces.astype(np.float64)
    out = [cm]
    for lv in range(1, levels):
        sigma = lobe_sigma(lv, levels)
        lr = _level_resolution(r, sigma)
        k = r // lr
        low, lw = _downsample(src, w, k)
        blurred = _convolve(low, lw, sigma)
        out.append(Cubemap(np.maximum(blurred, 0).astype(np.float32), cm.center))
    return out
