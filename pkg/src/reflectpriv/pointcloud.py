"""World-space point clouds with per-point provenance, ICP, and fusion.

Every point remembers the (frame_id, u, v) depth pixel it came from. That
index is what lets the privacy defense recolor points late, after
registration has already used the geometry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import RigidTransform, compose
from .scene import CaptureFrame, Confidence

log = logging.getLogger(__name__)


class DegenerateRegistration(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ProvenancedPointCloud:
    positions: np.ndarray   # (N, 3) world meters
    colors: np.ndarray      # (N, 3) linear
    confidence: np.ndarray  # (N,) uint8 Confidence values
    provenance: np.ndarray  # (N, 3) int64 (frame_id, u, v)

    def __post_init__(self):
        n = len(self.positions)
        if not (len(self.colors) == len(self.confidence) == len(self.provenance) == n):
            raise ValueError("point cloud arrays must have equal length")

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls) -> "ProvenancedPointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.float32), np.zeros(0, np.uint8),
                   np.zeros((0, 3), np.int64))

    def subset(self, idx) -> "ProvenancedPointCloud":
        return ProvenancedPointCloud(self.positions[idx], self.colors[idx], self.confidence[idx],
                                     self.provenance[idx])

    def transformed(self, t: RigidTransform) -> "ProvenancedPointCloud":
        return ProvenancedPointCloud(t.apply(self.positions), self.colors, self.confidence,
                                     self.provenance)

    def with_colors(self, colors: np.ndarray) -> "ProvenancedPointCloud":
        return ProvenancedPointCloud(self.positions, colors, self.confidence, self.provenance)

    @staticmethod
    def concat(clouds) -> "ProvenancedPointCloud":
        clouds = list(clouds)
        if not clouds:
            return ProvenancedPointCloud.empty()
        return ProvenancedPointCloud(*(np.concatenate([getattr(c, k) for c in clouds])
                                       for k in ("positions", "colors", "confidence", "provenance")))

    def provenance_unique(self) -> bool:
        return len(np.unique(self.provenance, axis=0)) == len(self)

    def same_as(self, other: "ProvenancedPointCloud") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("positions", "colors", "confidence", "provenance"))


@dataclass(frozen=True)
class NearFieldSpec:
    """Axis-aligned cube of side ``side`` centered on the rendering anchor."""

    center: tuple[float, float, float]
    side: float = 2.0

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("near-field side must be positive")


def frame_to_points(frame: CaptureFrame, keep=(Confidence.HIGH,)) -> ProvenancedPointCloud:
    """One point per kept-confidence, valid-depth depth pixel."""
    d = frame.depth
    ok = (d > 0) & np.isin(frame.confidence, np.asarray(keep, dtype=np.uint8))
    v, u = np.nonzero(ok)
    z = d[v, u]
    intr = frame.intrinsics_depth
    cam = np.stack([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z], axis=1)
    s = frame.scale
    # depth pixel (u, v) is centered on rgb pixel (u*s + s//2, v*s + s//2)
    colors = frame.rgb[v * s + s // 2, u * s + s // 2]
    prov = np.stack([np.full(len(u), frame.frame_id), u, v], axis=1).astype(np.int64)
    return ProvenancedPointCloud(frame.pose.apply(cam), colors, frame.confidence[v, u], prov)


def crop_near_field(pc: ProvenancedPointCloud, spec: NearFieldSpec) -> ProvenancedPointCloud:
    """Keep points with Chebyshev distance to the center <= side / 2 (inclusive)."""
    off = np.abs(pc.positions - np.asarray(spec.center, dtype=np.float64))
    return pc.subset(np.all(off <= spec.side / 2.0, axis=1))


# ---------------------------------------------------------------------------
# nearest neighbours on a uniform voxel grid

_BIG = 1 << 20
_OFF = 1 << 19


def _cell_keys(cells: np.ndarray) -> np.ndarray:
    c = cells.astype(np.int64) + _OFF
    return (c[..., 0] * _BIG + c[..., 1]) * _BIG + c[..., 2]


def _shell(k: int) -> np.ndarray:
    r = np.arange(-k, k + 1)
    g = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[np.abs(g).max(axis=1) == k]


class VoxelGridIndex:
    """Exact radius-limited nearest-neighbour search over a hashed voxel grid.

    Cells are searched in growing Chebyshev shells; a query stops as soon as
    its best distance is no larger than the guaranteed distance to any
    unsearched cell.
    """

    def __init__(self, points: np.ndarray, cell: float):
        self.points = np.asarray(points, dtype=np.float64)
        self.cell = float(cell)
        keys = _cell_keys(np.floor(self.points / self.cell))
        self.order = np.argsort(keys, kind="stable")
        sk = keys[self.order]
        self.keys, self.starts, self.counts = np.unique(sk, return_index=True, return_counts=True)

    def nearest(self, queries: np.ndarray, max_dist: float) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of nearest points; index -1 beyond ``max_dist``."""
        q = np.asarray(queries, dtype=np.float64)
        n = len(q)
        best_d2 = np.full(n, np.inf)
        best_i = np.full(n, -1, dtype=np.int64)
        if n == 0 or len(self.points) == 0:
            return np.full(n, np.inf), best_i
        qcell = np.floor(q / self.cell).astype(np.int64)
        active = np.arange(n)
        kmax = int(np.ceil(max_dist / self.cell)) + 1
        for k in range(kmax + 1):
            if len(active) == 0:
                break
            offs = _shell(k) if k else np.zeros((1, 3), np.int64)
            nk = _cell_keys(qcell[active][:, None, :] + offs[None, :, :])
            pos = np.searchsorted(self.keys, nk)
            pos = np.minimum(pos, len(self.keys) - 1)
            hit = self.keys[pos] == nk
            qa = np.repeat(active, len(offs)).reshape(nk.shape)[hit]
            st = self.starts[pos[hit]]
            ct = self.counts[pos[hit]]
            if len(qa):
                tot = ct.sum()
                qi = np.repeat(qa, ct)
                base = np.repeat(st - np.concatenate([[0], np.cumsum(ct)[:-1]]), ct)
                pi = self.order[base + np.arange(tot)]
                d2 = np.sum((q[qi] - self.points[pi]) ** 2, axis=1)
                srt = np.lexsort((pi, d2, qi))
                first = np.ones(len(srt), dtype=bool)
                first[1:] = qi[srt][1:] != qi[srt][:-1]
                cq, cd, cp = qi[srt][first], d2[srt][first], pi[srt][first]
                better = (cd < best_d2[cq]) | ((cd == best_d2[cq]) & (cp < best_i[cq]))
                best_d2[cq[better]] = cd[better]
                best_i[cq[better]] = cp[better]
            # anything not yet searched is at least k * cell away
            reach = (k * self.cell) ** 2
            active = active[(best_d2[active] > reach) & (k * self.cell < max_dist)]
        d = np.sqrt(best_d2)
        best_i[d > max_dist] = -1
        return d, best_i


# ---------------------------------------------------------------------------
# ICP

@dataclass(frozen=True)
class IcpParams:
    max_corr: float = 0.10
    max_iter: int = 50
    tol: float = 1e-6
    max_points: int | None = 3000
    grid_cell: float | None = None  # defaults to max_corr / 4


def kabsch(p: np.ndarray, q: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping points ``p`` onto ``q``."""
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    h = (p - pc).T @ (q - qc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T  # flips the last singular axis on reflections
    return RigidTransform(r, qc - r @ pc)


def _subsample(n: int, m: int | None) -> np.ndarray:
    if m is None or n <= m:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, m).round().astype(np.int64))


def icp_register(source, target, params: IcpParams = IcpParams(),
                 index: VoxelGridIndex | None = None) -> RigidTransform:
    """Point-to-point ICP; returns the source-to-target transform.

    ``source``/``target`` may be point clouds or (N, 3) arrays.
    """
    src = getattr(source, "positions", source)
    tgt = getattr(target, "positions", target)
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if len(src) < 10 or len(tgt) < 10:
        raise DegenerateRegistration(f"need >= 10 points per cloud (got {len(src)}, {len(tgt)})")
    src = src[_subsample(len(src), params.max_points)]
    if index is None:
        index = VoxelGridIndex(tgt, params.grid_cell or params.max_corr / 4)
    total = RigidTransform.identity()
    cur = src
    prev = np.inf
    for _ in range(params.max_iter):
        d, idx = index.nearest(cur, params.max_corr)
        ok = idx >= 0
        if ok.sum() < 3:
            raise DegenerateRegistration(f"only {int(ok.sum())} correspondences within "
                                         f"{params.max_corr} m")
        rmse = float(np.sqrt(np.mean(d[ok] ** 2)))
        step = kabsch(cur[ok], tgt[idx[ok]])
        cur = step.apply(cur)
        total = compose(step, total)
        # RMSE over a growing inlier set can rise; only a small non-negative gain means converged
        if 0.0 <= prev - rmse < params.tol:
            break
        prev = rmse
    return total


# ---------------------------------------------------------------------------
# fusion

def voxel_downsample(pc: ProvenancedPointCloud, voxel: float) -> ProvenancedPointCloud:
    """One point per voxel: highest confidence, then lowest frame_id, then lowest (u, v)."""
    if len(pc) == 0:
        return pc
    keys = _cell_keys(np.floor(pc.positions / voxel))
    p = pc.provenance
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0], -pc.confidence.astype(np.int64), keys))
    sk = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sk[1:] != sk[:-1]
    keep = order[first]
    keep = keep[np.lexsort((p[keep, 2], p[keep, 1], p[keep, 0]))]
    return pc.subset(keep)


@dataclass(frozen=True)
class FuseParams:
    near_field_side: float = 2.0
    voxel: float = 0.01
    register: bool = True
    icp: IcpParams = IcpParams()
    keep: tuple[int, ...] = (int(Confidence.HIGH),)


@dataclass
class FuseResult:
    cloud: ProvenancedPointCloud
    corrections: dict[int, RigidTransform] = field(default_factory=dict)
    skipped: dict[int, str] = field(default_factory=dict)

    @property
    def warnings(self) -> int:
        return len(self.skipped)


def fuse(frames, anchor, params: FuseParams = FuseParams(), clouds=None) -> FuseResult:
    """Fuse frames into one near-field cloud.

    The first frame with near-field points is the reference; every later
    frame is registered to the union of all corrected frames before it.
    The union is voxel-downsampled once at the end. ``clouds`` may supply
    precomputed per-frame clouds (same order as ``frames``).
    """
    frames = list(frames)
    if not frames:
        raise ValueError("fuse needs at least one frame")
    spec = NearFieldSpec(tuple(anchor), params.near_field_side)
    keep = tuple(Confidence(k) for k in params.keep)
    if clouds is None:
        clouds = [frame_to_points(f, keep) for f in frames]
    parts: list[ProvenancedPointCloud] = []
    res = FuseResult(ProvenancedPointCloud.empty())
    for f, pc in zip(frames, clouds):
        pc = crop_near_field(pc, spec)
        if len(pc) == 0:
            res.skipped[f.frame_id] = "no near-field points"
            continue
        t = RigidTransform.identity()
        if parts and params.register:
            target = np.concatenate([p.positions for p in parts])
            try:
                t = icp_register(pc, target, params.icp)
            except DegenerateRegistration as e:
                log.warning("frame %d skipped: %s", f.frame_id, e)
                res.skipped[f.frame_id] = f"degenerate registration: {e}"
                continue
            pc = crop_near_field(pc.transformed(t), spec)
        res.corrections[f.frame_id] = t
        parts.append(pc)
    res.cloud = voxel_downsample(ProvenancedPointCloud.concat(parts), params.voxel)
    return res


def write_ply(path, pc: ProvenancedPointCloud) -> None:
    """ASCII PLY with float position, uchar color, and int provenance per vertex."""
    from .color import encode_u8
    rgb = encode_u8(pc.colors)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pc)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             "property uchar confidence",
             "property int frame_id", "property int u", "property int v", "end_header"]
    for p, c, k, pr in zip(pc.positions, rgb, pc.confidence, pc.provenance):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]} {k} "
                     f"{pr[0]} {pr[1]} {pr[2]}")
    Path(path).write_text("\n".join(lines) + "\n")
