"""Synthetic indoor scenes with sensitive plaques, and virtual RGB-D capture."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import color, glyph
from .geom import Intrinsics, RigidTransform, look_at, rotation_about_axis
from .glyph import Kind


class SceneError(ValueError):
    pass


class Confidence(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


MIN_DEPTH, MAX_DEPTH = 0.05, 20.0
PLAQUE_OFFSET = 5e-4  # plaques float this far in front of their wall


@dataclass(frozen=True)
class Plaque:
    """A glyph rectangle. Local frame: +x right, +y down, +z into the wall."""

    payload: str
    kind: Kind
    placement: RigidTransform
    size: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        glyph.validate_payload(self.payload)
        if min(self.size) <= 0:
            raise SceneError("plaque size must be positive")

    @property
    def bitmap(self) -> np.ndarray:
        return glyph.encode_plaque(self.payload, self.kind)

    @property
    def normal(self) -> np.ndarray:
        """Front-facing unit normal (points into the room)."""
        return -self.placement.rotation[:, 2]

    def corners(self) -> np.ndarray:
        """World-space corners in order top-left, top-right, bottom-right, bottom-left."""
        w, h = self.size
        local = np.array([[-w / 2, -h / 2, 0], [w / 2, -h / 2, 0], [w / 2, h / 2, 0], [-w / 2, h / 2, 0]])
        return self.placement.apply(local)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Ray parameter t (inf on miss) and local cell (row, col) per ray."""
        r, c = self.placement.rotation, self.placement.translation
        d_loc = dirs @ r
        o_loc = (origins - c) @ r
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o_loc[..., 2] / d_loc[..., 2]
        p = o_loc + t[..., None] * d_loc
        w, h = self.size
        col = np.floor((p[..., 0] / w + 0.5) * glyph.GRID)
        row = np.floor((p[..., 1] / h + 0.5) * glyph.GRID)
        ok = (t > 0) & (col >= 0) & (col < glyph.GRID) & (row >= 0) & (row < glyph.GRID)
        ok &= np.isfinite(t)
        t = np.where(ok, t, np.inf)
        return t, row.astype(np.int64, copy=False), col.astype(np.int64, copy=False)


def plaque_on_wall(payload: str, kind, center, normal, size=(0.45, 0.45), up=(0, 1, 0)) -> Plaque:
    """Plaque centered at ``center`` facing along ``normal`` (into the room)."""
    center = np.asarray(center, dtype=np.float64)
    pose = look_at(center, center - np.asarray(normal, dtype=np.float64), up=up)
    pose = RigidTransform(pose.rotation, center + PLAQUE_OFFSET * np.asarray(normal, dtype=np.float64))
    return Plaque(payload, Kind(kind), pose, tuple(size))


@dataclass(frozen=True)
class Scene:
    """Axis-aligned room with procedurally textured walls and plaques."""

    room_min: tuple[float, float, float]
    room_max: tuple[float, float, float]
    wall_seeds: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    plaques: tuple[Plaque, ...] = ()
    ambient_level: float = 1.0
    name: str = "scene"

    def __post_init__(self):
        lo, hi = np.asarray(self.room_min, float), np.asarray(self.room_max, float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise SceneError("room extents must be positive")
        if len(self.wall_seeds) != 6:
            raise SceneError("need one texture seed per wall")
        if not 0 <= self.ambient_level <= 1:
            raise SceneError("ambient_level must lie in [0, 1]")
        object.__setattr__(self, "plaques", tuple(self.plaques))
        for p in self.plaques:
            pts = np.vstack([p.corners(), p.placement.translation])
            if np.any(pts < lo - 1e-9) or np.any(pts > hi + 1e-9):
                raise SceneError(f"plaque {p.payload!r} lies outside the room")

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p > np.asarray(self.room_min)) and np.all(p < np.asarray(self.room_max)))

    def wall_albedo(self, wall: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Low-frequency procedural texture. ``wall`` indexes +X,-X,+Y,-Y,+Z,-Z."""
        out = np.zeros(pts.shape, dtype=np.float64)
        for k in range(6):
            m = wall == k
            if not np.any(m):
                continue
            rng = np.random.default_rng(self.wall_seeds[k])
            base = rng.uniform(0.3, 0.55, 3)
            axes = [a for a in range(3) if a != k // 2]
            a, b = pts[m][:, axes[0]], pts[m][:, axes[1]]
            shade = np.ones_like(a)
            for _ in range(3):
                fa, fb = rng.uniform(0.5, 2.0, 2)
                ph = rng.uniform(0, 2 * np.pi)
                shade += 0.06 * np.sin(2 * np.pi * (fa * a + fb * b) + ph)
            out[m] = base[None, :] * shade[:, None]
        return out

    def raycast(self, origin, dirs: np.ndarray):
        """Cast rays from a point inside the room.

        Returns ``(t, albedo, plaque_index)`` where ``t`` is the ray parameter
        along the (unnormalized) directions and ``plaque_index`` is -1 on walls.
        """
        o = np.asarray(origin, dtype=np.float64)
        lo, hi = np.asarray(self.room_min, float), np.asarray(self.room_max, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_axis = np.where(dirs > 0, (hi - o) / dirs, np.where(dirs < 0, (lo - o) / dirs, np.inf))
        axis = np.argmin(t_axis, axis=-1)
        t = np.take_along_axis(t_axis, axis[..., None], axis=-1)[..., 0]
        sign = np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0] > 0
        wall = 2 * axis + np.where(sign, 0, 1)
        pts = o + t[..., None] * dirs
        albedo = self.wall_albedo(wall.ravel(), pts.reshape(-1, 3)).reshape(pts.shape)
        label = np.full(t.shape, -1, dtype=np.int64)
        for i, p in enumerate(self.plaques):
            tp, row, col = p.intersect(o[None, :], dirs)
            hit = tp <= t
            if not np.any(hit):
                continue
            bm = p.bitmap
            level = np.where(bm[np.clip(row, 0, glyph.GRID - 1), np.clip(col, 0, glyph.GRID - 1)],
                             glyph.DARK_LEVEL, glyph.LIGHT_LEVEL)
            t = np.where(hit, tp, t)
            albedo = np.where(hit[..., None], level[..., None], albedo)
            label = np.where(hit, i, label)
        return t, albedo, label

    def radiance(self, albedo: np.ndarray) -> np.ndarray:
        return albedo * (0.6 + 0.4 * self.ambient_level)


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[RigidTransform, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 2:
            raise SceneError("trajectory needs at least two poses")
        for a, b in zip(self.poses, self.poses[1:]):
            if np.linalg.norm(a.translation - b.translation) > 0.5 + 1e-12:
                raise SceneError("consecutive poses more than 0.5 m apart")


@dataclass(frozen=True)
class CaptureConfig:
    rgb_size: tuple[int, int] = (640, 480)
    depth_size: tuple[int, int] = (128, 96)
    hfov: float = np.deg2rad(60.0)
    low_radius: int = 1
    medium_radius: int = 0
    discontinuity: float = 0.1
    noise: bool = False
    depth_noise: float = 0.005
    jitter_deg: float = 0.5
    jitter_m: float = 0.005
    seed: int = 0

    @property
    def scale(self) -> int:
        (rw, rh), (dw, dh) = self.rgb_size, self.depth_size
        if rw % dw or rh % dh or rw // dw != rh // dh:
            raise SceneError("rgb size must be an integer multiple of depth size")
        return rw // dw

    def intrinsics(self) -> tuple[Intrinsics, Intrinsics]:
        """(rgb, depth) intrinsics; depth pixel centers land on rgb pixel centers."""
        depth = Intrinsics.from_fov(*self.depth_size, self.hfov)
        return depth.scaled(self.scale), depth


FULL_CAPTURE = CaptureConfig(rgb_size=(1280, 960), depth_size=(256, 192))


@dataclass(frozen=True, eq=False)
class CaptureFrame:
    """One RGB-D observation. ``rgb`` is linear light on the 8-bit sRGB grid."""

    frame_id: int
    rgb: np.ndarray
    depth: np.ndarray
    confidence: np.ndarray
    pose: RigidTransform
    intrinsics_rgb: Intrinsics
    intrinsics_depth: Intrinsics

    @property
    def scale(self) -> int:
        return self.rgb.shape[1] // self.depth.shape[1]

    def same_as(self, other: "CaptureFrame") -> bool:
        return (self.frame_id == other.frame_id and np.array_equal(self.rgb, other.rgb)
                and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.confidence, other.confidence)
                and self.pose == other.pose and self.intrinsics_rgb == other.intrinsics_rgb
                and self.intrinsics_depth == other.intrinsics_depth)

    def with_rgb(self, rgb: np.ndarray) -> "CaptureFrame":
        return replace(self, rgb=rgb)


def _confidence_map(depth: np.ndarray, cfg: CaptureConfig) -> np.ndarray:
    conf = np.full(depth.shape, Confidence.HIGH, dtype=np.uint8)
    jump = np.zeros(depth.shape, dtype=bool)
    dx = np.abs(np.diff(depth, axis=1)) > cfg.discontinuity
    dy = np.abs(np.diff(depth, axis=0)) > cfg.discontinuity
    jump[:, 1:] |= dx
    jump[:, :-1] |= dx
    jump[1:, :] |= dy
    jump[:-1, :] |= dy
    if cfg.medium_radius > 0:
        med = ndimage.binary_dilation(jump, iterations=cfg.medium_radius)
        conf[med] = Confidence.MEDIUM
    if cfg.low_radius > 0:
        jump = ndimage.binary_dilation(jump, iterations=cfg.low_radius)
    conf[jump] = Confidence.LOW
    conf[depth == 0] = Confidence.LOW
    return conf


def _jitter(pose: RigidTransform, rng: np.random.Generator, cfg: CaptureConfig) -> RigidTransform:
    axis = rng.normal(size=3)
    ang = np.deg2rad(cfg.jitter_deg) * rng.uniform(0, 1)
    d = rng.normal(size=3)
    d *= cfg.jitter_m * rng.uniform(0, 1) / np.linalg.norm(d)
    return RigidTransform(rotation_about_axis(axis, ang) @ pose.rotation, pose.translation + d)


def _cast_image(scene: Scene, pose: RigidTransform, intr: Intrinsics):
    rays = pose.apply_vectors(intr.pixel_rays())
    return scene.raycast(pose.translation, rays)


def capture(scene: Scene, traj: Trajectory, cfg: CaptureConfig = CaptureConfig()) -> list[CaptureFrame]:
    """Ray-cast one RGB-D frame per trajectory pose.

    Depth is the camera-space z of the hit, snapped to whole millimeters
    like the on-disk format. With ``cfg.noise`` the
    depth gets Gaussian noise and the recorded pose is jittered relative to
    the true capture pose.
    """
    intr_rgb, intr_depth = cfg.intrinsics()
    frames = []
    for i, pose in enumerate(traj.poses):
        if not scene.contains(pose.translation):
            raise SceneError(f"pose {i} at {pose.translation.tolist()} is outside the room")
        rng = np.random.default_rng([cfg.seed, i])
        depth, _, _ = _cast_image(scene, pose, intr_depth)
        _, albedo, _ = _cast_image(scene, pose, intr_rgb)
        rgb = color.quantize(scene.radiance(albedo)).astype(np.float32)
        recorded = pose
        if cfg.noise:
            depth = depth + rng.normal(size=depth.shape) * cfg.depth_noise * depth
            recorded = _jitter(pose, rng, cfg)
        depth = np.where((depth > MIN_DEPTH) & (depth < MAX_DEPTH), depth, 0.0)
        depth = np.round(depth * 1000.0) / 1000.0  # millimeter storage grid
        frames.append(CaptureFrame(i, rgb, depth, _confidence_map(depth, cfg), recorded,
                                   intr_rgb, intr_depth))
    return frames


def plaque_labels(scene: Scene, pose: RigidTransform, intr: Intrinsics) -> np.ndarray:
    """Per-pixel index of the plaque seen at each pixel (-1 for walls)."""
    return _cast_image(scene, pose, intr)[2]


def plaque_in_view(plaque: Plaque, pose: RigidTransform, intr: Intrinsics, samples: int = 21) -> bool:
    """Whether any point of the plaque projects inside the image, in front of the camera."""
    w, h = plaque.size
    g = np.linspace(-0.5, 0.5, samples)
    xx, yy = np.meshgrid(g * w, g * h)
    local = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
    world = plaque.placement.apply(local)
    cam = (world - pose.translation) @ pose.rotation
    z = cam[:, 2]
    front = z > 1e-6
    u = cam[front, 0] / z[front] * intr.fx + intr.cx
    v = cam[front, 1] / z[front] * intr.fy + intr.cy
    inside = (u >= -0.5) & (u < intr.width - 0.5) & (v >= -0.5) & (v < intr.height - 0.5)
    return bool(np.any(inside))


# ---------------------------------------------------------------------------
# default suite

ANCHOR = (0.0, 0.95, 0.0)
PLAQUE_SIZE = 0.45
_WALL_Z = 0.95


def _grid_slot(i: int) -> tuple[float, float]:
    off = PLAQUE_SIZE / 2 + 0.035
    return [(-off, off), (off, off), (-off, -off), (off, -off)][i]


def _suite_scene(name: str, fields: list[tuple[str, Kind]], seed: int, room_max) -> Scene:
    ax, ay, _ = ANCHOR
    n = len(fields)
    plaques = []
    for i, (payload, kind) in enumerate(fields):
        if n == 2:
            dx, dy = _grid_slot(i)[0], 0.05
        else:
            dx, dy = _grid_slot(i)
        plaques.append(plaque_on_wall(payload, kind, (ax + dx, ay + dy, _WALL_Z), (0, 0, -1),
                                      size=(PLAQUE_SIZE, PLAQUE_SIZE)))
    rng = np.random.default_rng(seed)
    seeds = tuple(int(s) for s in rng.integers(0, 2**31, 6))
    return Scene((-0.95, 0.0, -2.5), room_max, seeds, tuple(plaques), 1.0, name)


def _suite_trajectory(seed: int) -> Trajectory:
    """Wide corner view first, then closer plaque sweeps, side walls, floor, and away.

    The first frame sees the plaque wall, the left wall, and the floor so
    that later frames register against three orthogonal planes.
    """
    a = np.asarray(ANCHOR)
    rng = np.random.default_rng(seed)
    j = lambda s: rng.uniform(-s, s, 3)  # noqa: E731
    corner = np.array([-0.3, 0.7, _WALL_Z])
    poses = [look_at((0.25, 1.2, -1.4) + j(0.02), corner + j(0.02)),
             look_at((0.0, 1.1, -1.05) + j(0.02), corner + (0.1, 0.0, 0.0) + j(0.02))]
    target = np.array([a[0], a[1], _WALL_Z])
    for e in [(0.1, 0.04, -0.6), (-0.1, -0.04, -0.4), (0.04, -0.06, -0.35)]:
        poses.append(look_at(a + np.asarray(e) + j(0.01), target + j(0.02)))
    eye = a + np.array([0.2, 0.1, -0.6])
    poses.append(look_at(eye, (-0.95, 0.7, 0.4)))
    poses.append(look_at(eye, (-0.95, 0.35, -0.2)))
    poses.append(look_at(eye, (-0.5, 0.0, 0.6)))
    poses.append(look_at(eye + (0.0, 0.0, -0.3), (-0.95, 0.1, -0.6)))
    poses.append(look_at(a + np.array([0.0, 0.0, -0.9]), (0.0, 0.95, -2.5)))
    return Trajectory(tuple(poses))


def make_default_suite(seed: int = 0) -> list[tuple[Scene, Trajectory]]:
    """Four fixed scenes: license-like (a, b), group photo (c), credit card (d).

    ``seed`` varies wall textures and trajectory jitter; 0 is the shipped suite.
    """
    specs = [
        ("a", [("DL 1234567", Kind.TEXT), ("JANE DOE", Kind.FACE)], 11, (2.5, 2.6, _WALL_Z)),
        ("b", [("CA D7654321", Kind.TEXT), ("JOHN ROE", Kind.FACE), ("ANN ROE", Kind.FACE)], 22,
         (2.2, 2.4, _WALL_Z)),
        ("c", [("ALICE", Kind.FACE), ("BOB", Kind.FACE), ("CAROL", Kind.FACE), ("DAVE", Kind.FACE)],
         33, (2.8, 2.7, _WALL_Z)),
        ("d", [("4111 1111 1111", Kind.TEXT), ("EXP 0927", Kind.TEXT), ("CVV 123", Kind.TEXT)], 44,
         (2.4, 2.5, _WALL_Z)),
    ]
    return [(_suite_scene(n, f, s + 1000 * seed, rm), _suite_trajectory(s + 1000 * seed))
            for n, f, s, rm in specs]


# ---------------------------------------------------------------------------
# plain-text key-value serialization

def _fmt(xs) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(xs))


def dumps_scene(scene: Scene, traj: Trajectory | None = None) -> str:
    """Serialize to ``key = value`` lines; vectors are space separated."""
    lines = [
        f"name = {scene.name}",
        f"room.min = {_fmt(scene.room_min)}",
        f"room.max = {_fmt(scene.room_max)}",
        f"room.seeds = {' '.join(str(s) for s in scene.wall_seeds)}",
        f"ambient_level = {float(scene.ambient_level)!r}",
        f"plaque.count = {len(scene.plaques)}",
    ]
    for i, p in enumerate(scene.plaques):
        lines += [
            f"plaque.{i}.payload = {p.payload}",
            f"plaque.{i}.kind = {p.kind.value}",
            f"plaque.{i}.pose = {_fmt(p.placement.matrix()[:3])}",
            f"plaque.{i}.size = {_fmt(p.size)}",
        ]
    if traj is not None:
        lines.append(f"trajectory.count = {len(traj.poses)}")
        for i, t in enumerate(traj.poses):
            lines.append(f"trajectory.{i} = {_fmt(t.matrix()[:3])}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SceneError(f"{source}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        # payloads may carry meaningful spaces; strip only the single separator
        out[k.strip()] = v[1:] if v.startswith(" ") else v
    return out


def _pose(s: str) -> RigidTransform:
    m = np.array([float(x) for x in s.split()]).reshape(3, 4)
    return RigidTransform(m[:, :3], m[:, 3])


def loads_scene(text: str, source: str = "<string>") -> tuple[Scene, Trajectory | None]:
    kv = parse_kv(text, source)
    try:
        vec = lambda k: tuple(float(x) for x in kv[k].split())  # noqa: E731
        plaques = []
        for i in range(int(kv["plaque.count"])):
            plaques.append(Plaque(kv[f"plaque.{i}.payload"], Kind(kv[f"plaque.{i}.kind"].strip()),
                                  _pose(kv[f"plaque.{i}.pose"]), vec(f"plaque.{i}.size")))
        scene = Scene(vec("room.min"), vec("room.max"),
                      tuple(int(x) for x in kv["room.seeds"].split()), tuple(plaques),
                      float(kv["ambient_level"]), kv.get("name", "scene").strip())
        traj = None
        if "trajectory.count" in kv:
            traj = Trajectory(tuple(_pose(kv[f"trajectory.{i}"])
                                    for i in range(int(kv["trajectory.count"]))))
    except KeyError as e:
        raise SceneError(f"{source}: missing key {e.args[0]!r}") from None
    return scene, traj


def save_scene(path, scene: Scene, traj: Trajectory | None = None) -> None:
    Path(path).write_text(dumps_scene(scene, traj))


def load_scene(path) -> tuple[Scene, Trajectory | None]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    return loads_scene(path.read_text(), str(path))
