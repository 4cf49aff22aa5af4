"""Reflective virtual objects lit by a prefiltered cubemap."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .envmap import Cubemap, dir_to_texel, sample_bilinear
from .geom import Intrinsics, RigidTransform, normalize

R2_MAX_METALLIC = 0.8
R2_MIN_ROUGHNESS = 0.2


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    metallic: float = 1.0
    roughness: float = 0.0
    base_color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not (0.0 <= self.metallic <= 1.0 and 0.0 <= self.roughness <= 1.0):
            raise RenderError("metallic and roughness must lie in [0, 1]")
        if len(self.base_color) != 3 or min(self.base_color) < 0:
            raise RenderError("base_color must be a non-negative rgb triple")


def clamp_material_r2(m: Material) -> Material:
    """Restricted rendering: cap reflectance at 0.8 and floor roughness at 0.2."""
    return replace(m, metallic=min(m.metallic, R2_MAX_METALLIC),
                   roughness=max(m.roughness, R2_MIN_ROUGHNESS))


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise RenderError("sphere radius must be positive")

    def intersect(self, o: np.ndarray, d: np.ndarray):
        """Nearest positive hit distance (inf on miss) and outward normals."""
        oc = o - np.asarray(self.center)
        b = d @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
        t = np.where(ok, t, np.inf)
        p = o + d * np.where(np.isfinite(t), t, 0.0)[..., None]
        return t, normalize(p - np.asarray(self.center))


@dataclass(frozen=True)
class Mirror:
    """Single-sided rectangle; ``half_extents`` run along right and up."""

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    half_extents: tuple[float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        n, u = np.asarray(self.normal, float), np.asarray(self.up, float)
        if abs(np.linalg.norm(n) - 1) > 1e-6 or abs(np.linalg.norm(u) - 1) > 1e-6:
            raise RenderError("mirror normal and up must be unit vectors")
        if abs(n @ u) > 1e-6:
            raise RenderError("mirror up must be perpendicular to its normal")
        if min(self.half_extents) <= 0:
            raise RenderError("mirror half-extents must be positive")

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.up, self.normal)

    def corners(self) -> np.ndarray:
        """World corners in TL, TR, BR, BL order as seen from the front."""
        c, u = np.asarray(self.center, float), np.asarray(self.up, float)
        rt = self.right
        w, h = self.half_extents
        return np.array([c - w * rt + h * u, c + w * rt + h * u, c + w * rt - h * u, c - w * rt - h * u])

    def intersect(self, o: np.ndarray, d: np.ndarray):
        n = np.asarray(self.normal, float)
        denom = d @ n
        front = denom < -1e-12
        t = np.where(front, ((np.asarray(self.center) - o) @ n) / np.where(front, denom, -1.0), np.inf)
        t = np.where(t > 1e-9, t, np.inf)
        p = o + d * np.where(np.isfinite(t), t, 0.0)[..., None]
        rel = p - np.asarray(self.center)
        inside = (np.abs(rel @ self.right) <= self.half_extents[0]) & \
                 (np.abs(rel @ np.asarray(self.up)) <= self.half_extents[1])
        t = np.where(inside, t, np.inf)
        return t, np.broadcast_to(n, d.shape)


@dataclass(frozen=True)
class VirtualObject:
    shape: Sphere | Mirror
    material: Material = Material()

    @property
    def kind(self) -> str:
        return "sphere" if isinstance(self.shape, Sphere) else "mirror"

    def with_material(self, m: Material) -> "VirtualObject":
        return VirtualObject(self.shape, m)


class Background(str, enum.Enum):
    TRANSPARENT = "transparent"
    ENVMAP = "envmap"


@dataclass(frozen=True)
class RenderView:
    pose: RigidTransform
    intrinsics: Intrinsics
    samples: int = 16
    background: Background = Background.TRANSPARENT
    ambient_weight: float = 1.0

    def __post_init__(self):
        if self.samples < 1:
            raise RenderError("samples must be >= 1")


@dataclass(frozen=True, eq=False)
class RenderResult:
    color: np.ndarray       # (H, W, 3) linear
    hit: np.ndarray         # (H, W) bool
    reflection: np.ndarray  # (H, W, 3), zero on misses


def level_for_roughness(roughness: float, levels: int) -> int:
    return int(np.clip(np.round(roughness * (levels - 1)), 0, levels - 1))


def _lookup(levels: list[Cubemap], level: int, dirs: np.ndarray, samples: int) -> np.ndarray:
    cm = levels[level]
    if level == 0:
        f, s, t = dir_to_texel(dirs, cm.resolution)
        return cm.faces[f, t, s].astype(np.float64)
    if samples == 1:
        return sample_bilinear(cm, dirs)
    # fixed jitter pattern about one level texel wide
    rng = np.random.default_rng(1234 + level)
    jit = rng.uniform(-1.0, 1.0, (samples, 3)) * (1.0 / cm.resolution)
    acc = np.zeros(dirs.shape, np.float64)
    for j in jit:
        acc += sample_bilinear(cm, dirs + j)
    return acc / samples


def render(obj: VirtualObject, levels: list[Cubemap], view: RenderView) -> RenderResult:
    """Ray-cast one virtual object under prefiltered environment ``levels``."""
    if not levels:
        raise RenderError("render needs prefiltered cubemap levels")
    intr = view.intrinsics
    h, w = intr.height, intr.width
    rays = normalize(view.pose.apply_vectors(intr.pixel_rays().reshape(-1, 3)))
    o = np.asarray(view.pose.translation, float)
    t, n = obj.shape.intersect(o, rays)
    hit = np.isfinite(t)
    color = np.zeros((h * w, 3))
    refl = np.zeros((h * w, 3))
    if view.background is Background.ENVMAP:
        color[~hit] = _lookup(levels, 0, rays[~hit], 1)
    if hit.any():
        d, nn = rays[hit], np.asarray(n)[hit]
        r = normalize(d - 2.0 * np.sum(d * nn, axis=1, keepdims=True) * nn)
        refl[hit] = r
        m = obj.material
        base = np.asarray(m.base_color, float)
        c = np.zeros_like(r)
        if m.metallic > 0:
            spec = _lookup(levels, level_for_roughness(m.roughness, len(levels)), r, view.samples)
            c += m.metallic * spec
        if m.metallic < 1:
            diff = _lookup(levels, len(levels) - 1, nn, view.samples)
            c += (1.0 - m.metallic) * view.ambient_weight * diff
        color[hit] = base * c
    return RenderResult(color.reshape(h, w, 3), hit.reshape(h, w), refl.reshape(h, w, 3))
