"""Index-based point cloud color swapping and the restricted-rendering fallback.

Detection and blurring run on the raw rgb frames alongside geometric
fusion. Only after fusion are flagged points recolored, looked up through
their (frame_id, u, v) provenance, so registration never sees obfuscated
pixels.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .detect import BuiltinDetector, DetectorUnavailable, Region
from .pointcloud import FuseParams, FuseResult, ProvenancedPointCloud, fuse
from .scene import CaptureFrame

log = logging.getLogger(__name__)


class PrivacyError(ValueError):
    pass


def detect(image: np.ndarray, detector=None, frame_id: int = 0) -> list[Region]:
    """Sensitive regions in one rgb frame (built-in plaque detector by default)."""
    detector = detector or BuiltinDetector()
    return list(detector(frame_id, image))


@dataclass(frozen=True)
class DetectionIndexSet:
    """frame_id -> {(u, v): originating regions} over the depth grid."""

    cells: dict[int, dict[tuple[int, int], tuple[Region, ...]]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(c) for c in self.cells.values())

    def contains(self, frame_id: int, u: int, v: int) -> bool:
        return (u, v) in self.cells.get(frame_id, {})

    def mask(self, frame_id: int, width: int, height: int) -> np.ndarray:
        m = np.zeros((height, width), bool)
        for u, v in self.cells.get(frame_id, {}):
            m[v, u] = True
        return m


def region_cells(bbox, s: int, margin: int, width: int, height: int) -> tuple[int, int, int, int]:
    """Depth-grid cell range [u0, u1) x [v0, v1) covering an rgb bbox."""
    x0, y0, x1, y1 = bbox
    u0 = max(0, x0 // s - margin)
    v0 = max(0, y0 // s - margin)
    u1 = min(width, -(-x1 // s) + margin)
    v1 = min(height, -(-y1 // s) + margin)
    return u0, v0, u1, v1


def regions_to_indices(regions, s: int, margin: int = 1,
                       depth_size: tuple[int, int] = (128, 96)) -> DetectionIndexSet:
    """Map rgb bboxes to depth-grid cells; ``depth_size`` is (width, height)."""
    w, h = depth_size
    cells: dict[int, dict[tuple[int, int], list[Region]]] = {}
    for r in regions:
        u0, v0, u1, v1 = region_cells(r.bbox, s, margin, w, h)
        per = cells.setdefault(r.frame_id, {})
        for v in range(v0, v1):
            for u in range(u0, u1):
                per.setdefault((u, v), []).append(r)
    return DetectionIndexSet({f: {k: tuple(v) for k, v in c.items()} for f, c in cells.items()})


def blur_sigma(width: int, height: int) -> float:
    return max(3.0, 0.05 * min(width, height))


def blur_frame(rgb: np.ndarray) -> np.ndarray:
    h, w = rgb.shape[:2]
    sig = blur_sigma(w, h)
    return ndimage.gaussian_filter(np.asarray(rgb, np.float64), (sig, sig, 0)[:rgb.ndim],
                                   mode="reflect").astype(rgb.dtype)


_KEY = 1 << 20


def ipc2s_swap(pc: ProvenancedPointCloud, idx: DetectionIndexSet, blurred: dict[int, np.ndarray],
               s: int) -> ProvenancedPointCloud:
    """Recolor flagged points from the blurred frame at their source pixel."""
    if len(idx) == 0:
        return pc
    colors = pc.colors.copy()
    prov = pc.provenance
    for fid, cells in idx.cells.items():
        if not cells:
            continue
        sel = np.nonzero(prov[:, 0] == fid)[0]
        if len(sel) == 0:
            continue
        if fid not in blurred:
            raise PrivacyError(f"no blurred image for frame {fid}")
        img = blurred[fid]
        uv = np.array(list(cells), dtype=np.int64)
        flagged = np.isin(prov[sel, 1] * _KEY + prov[sel, 2], uv[:, 0] * _KEY + uv[:, 1])
        hit = sel[flagged]
        u, v = prov[hit, 1], prov[hit, 2]
        colors[hit] = img[v * s + s // 2, u * s + s // 2]
    return pc.with_colors(colors)


@dataclass(frozen=True)
class DefensePolicy:
    min_detector_confidence: float = 0.5
    dynamic_environment: bool = False
    expansion_margin: int = 1

    def __post_init__(self):
        if not 0.0 <= self.min_detector_confidence <= 1.0:
            raise PrivacyError("min_detector_confidence must lie in [0, 1]")
        if self.expansion_margin < 0:
            raise PrivacyError("expansion_margin must be >= 0")


class Decision(str, enum.Enum):
    DEFENDED_CLOUD = "DEFENDED_CLOUD"
    FALLBACK_R2 = "FALLBACK_R2"


@dataclass
class DefenseResult:
    decision: Decision
    reason: str = ""
    cloud: ProvenancedPointCloud | None = None
    fused: FuseResult | None = None
    regions: dict[int, list[Region]] = field(default_factory=dict)
    log: list[str] = field(default_factory=list)
    indices: DetectionIndexSet | None = None

    @property
    def fallback(self) -> bool:
        return self.decision is Decision.FALLBACK_R2


def _detect_and_blur(frame: CaptureFrame, detector):
    try:
        regions = detect(frame.rgb, detector, frame.frame_id)
        err = None
    except DetectorUnavailable as e:
        regions, err = [], str(e)
    return regions, err, blur_frame(frame.rgb)


def run_defense(frames, anchor, detector=None, policy: DefensePolicy = DefensePolicy(),
                fuse_params: FuseParams = FuseParams(), fused: FuseResult | None = None) -> DefenseResult:
    """Detect and blur in a worker thread while the main thread fuses geometry.

    A precomputed undefended ``fused`` result may be passed in; it is used
    as-is, which is valid because fusion never reads the defense's outputs.
    """
    frames = list(frames)
    if not frames:
        raise PrivacyError("run_defense needs at least one frame")
    detector = detector or BuiltinDetector()
    if policy.dynamic_environment:
        res = DefenseResult(Decision.FALLBACK_R2, "dynamic environment")
        res.log.append("policy: dynamic environment flag set, using restricted rendering")
        log.info(res.log[-1])
        return res

    def defense_path():
        # frames in order; one detector process is not safe to share across threads
        return [_detect_and_blur(f, detector) for f in frames]

    with ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(defense_path)
        if fused is None:
            fused = fuse(frames, anchor, fuse_params)
        outputs = fut.result()

    res = DefenseResult(Decision.DEFENDED_CLOUD, fused=fused)
    blurred = {}
    all_regions = []
    for f, (regions, err, blur) in zip(frames, outputs):
        blurred[f.frame_id] = blur
        res.regions[f.frame_id] = regions
        if err is not None:
            res.log.append(f"frame {f.frame_id}: detector unavailable: {err}")
            if not res.fallback:
                res.decision, res.reason = Decision.FALLBACK_R2, "detector unavailable"
            continue
        desc = ", ".join(f"{r.kind.value}@{list(r.bbox)} conf={r.confidence:.2f}" for r in regions)
        res.log.append(f"frame {f.frame_id}: {len(regions)} region(s){': ' + desc if desc else ''}")
        low = [r for r in regions if r.confidence < policy.min_detector_confidence]
        if low and not res.fallback:
            res.decision = Decision.FALLBACK_R2
            res.reason = (f"low detector confidence {min(r.confidence for r in low):.2f} < "
                          f"{policy.min_detector_confidence} in frame {f.frame_id}")
        all_regions += regions
    if res.fallback:
        res.log.append(f"decision: FALLBACK_R2 ({res.reason})")
        log.info(res.log[-1])
        return res
    f0 = frames[0]
    s = f0.scale
    dh, dw = f0.depth.shape
    res.indices = regions_to_indices(all_regions, s, policy.expansion_margin, (dw, dh))
    res.cloud = ipc2s_swap(fused.cloud, res.indices, blurred, s)
    res.log.append(f"decision: DEFENDED_CLOUD ({len(res.indices)} flagged depth cells)")
    log.info(res.log[-1])
    return res

