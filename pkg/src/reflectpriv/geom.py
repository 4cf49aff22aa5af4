"""Geometry primitives: rigid transforms, pinhole intrinsics, reflection, homographies.

Conventions used throughout the package: camera space is +X right, +Y down,
+Z forward; poses are stored camera-to-world; distances are meters and
angles radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Invalid geometric input (non-positive depth, non-unit vector, ...)."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation followed by translation, ``x -> R @ x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation).reshape(3, 3))
        object.__setattr__(self, "translation", _frozen(self.translation).reshape(3))

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    __hash__ = None

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        """Rotate an (..., 3) array of directions (translation ignored)."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def is_rigid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (np.abs(r.T @ r - np.eye(3)).max() <= tol
                and abs(np.linalg.det(r) - 1.0) <= tol)


def transform_point(t: RigidTransform, p) -> np.ndarray:
    return t.apply(p)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def rotation_angle(r) -> float:
    """Angle in radians of a rotation matrix."""
    c = (np.trace(np.asarray(r)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def orthonormalize(r) -> np.ndarray:
    """Nearest proper rotation to ``r`` (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """Camera-to-world pose at ``eye`` looking at ``target``.

    Image-down (+Y camera) is aligned with ``-up`` as closely as possible.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    n = np.linalg.norm(x)
    if n < 1e-9:
        raise GeometryError("look_at: view direction parallel to up vector")
    x /= n
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), eye)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; pixel (u, v) has its center at integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov: float) -> "Intrinsics":
        """Square-pixel intrinsics with horizontal field of view ``hfov`` (radians)."""
        f = (width / 2.0) / np.tan(hfov / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def scaled(self, s: int) -> "Intrinsics":
        """Intrinsics of an image ``s`` times larger covering the same field of view.

        Pixel centers correspond as ``x_big = s * x + (s - 1) / 2``.
        """
        off = (s - 1) / 2.0
        return Intrinsics(self.fx * s, self.fy * s, self.cx * s + off, self.cy * s + off,
                          self.width * s, self.height * s)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) camera-space ray directions with z = 1."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64),
                           np.arange(self.height, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)


def unproject(pixel, depth: float, intr: Intrinsics) -> np.ndarray:
    u, v = pixel
    if not depth > 0:
        raise GeometryError(f"depth must be positive, got {depth}")
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise GeometryError(f"pixel {pixel} outside {intr.width}x{intr.height} image")
    return np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])


def project(p, intr: Intrinsics) -> np.ndarray:
    """Camera-space point(s) (..., 3) to pixel coordinates (..., 2)."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    return np.stack([p[..., 0] / z * intr.fx + intr.cx, p[..., 1] / z * intr.fy + intr.cy], axis=-1)


def reflect(incident, normal, tol: float = 1e-6) -> np.ndarray:
    d = np.asarray(incident, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1) > tol or abs(np.linalg.norm(n) - 1) > tol:
        raise GeometryError("reflect expects unit-length incident and normal")
    return d - 2.0 * np.dot(d, n) * n


def reflect_many(incident: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Vectorized reflection over (..., 3) arrays; no unit-length checks."""
    dot = np.sum(incident * normal, axis=-1, keepdims=True)
    return incident - 2.0 * dot * normal


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def homography_from_points(src, dst) -> np.ndarray:
    """3x3 homography H with ``dst ~ H @ src`` from four or more correspondences.

    Normalized DLT. Raises GeometryError for degenerate configurations
    (three collinear points among four).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.shape[0] < 4:
        raise GeometryError("need at least four point pairs")
    for pts in (src, dst):
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                for k in range(j + 1, len(pts)):
                    a, b, c = pts[i], pts[j], pts[k]
                    area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-12) ** 2
                    if abs(area) < 1e-9 * scale:
                        raise GeometryError("degenerate quad: collinear corners")

    def norm_mat(p):
        c = p.mean(axis=0)
        s = np.sqrt(2) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-12)
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])

    ts, td = norm_mat(src), norm_mat(dst)
    sh = np.c_[src, np.ones(len(src))] @ ts.T
    dh = np.c_[dst, np.ones(len(dst))] @ td.T
    rows = []
    for (x, y, _), (u, v, _) in zip(sh, dh):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    return h / h[2, 2]


def apply_homography(h: np.ndarray, pts) -> np.ndarray:
    p = np.asarray(pts, dtype=np.float64)
    q = p @ h[:, :2].T + h[:, 2]
    return q[..., :2] / q[..., 2:3]
