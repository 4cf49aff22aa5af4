"""Reading sensitive content back out of rendered reflections.

The attacker sees only rendered pixels. For unwraps it is additionally
assumed to know the object geometry and the camera. Ground truth for
scoring comes from the synthetic scene: every rendered pixel is labelled
with the plaque seen along its reflection direction from the anchor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .detect import BuiltinDetector, Region
from .geom import GeometryError, apply_homography, homography_from_points
from .glyph import Kind
from .metrics import levenshtein

SUCCESS_DISTANCE = 10
FACE_MIN_CONFIDENCE = 0.5


# ---------------------------------------------------------------------------
# unwrapping

def unwrap_mirror(image: np.ndarray, hit: np.ndarray, corners: np.ndarray,
                  out_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Rectify the mirror quad onto a (width, height) image.

    ``corners`` are the projected mirror corners (TL, TR, BR, BL) in pixel
    coordinates with pixel centers on integers. Returns the bilinearly
    resampled image and a validity mask (samples fully on hit pixels).
    """
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape != (4, 2) or not np.all(np.isfinite(corners)):
        raise GeometryError("need four finite projected corners")
    w, h = out_size
    rect = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)
    hmat = homography_from_points(rect, corners)
    ys, xs = np.mgrid[0:h, 0:w]
    src = apply_homography(hmat, np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1))
    src = np.round(src, 9)  # keep exact border samples from drifting just outside the image
    coords = [src[:, 1], src[:, 0]]
    img = np.asarray(image, dtype=np.float64)
    chans = img[..., None] if img.ndim == 2 else img
    out = np.stack([ndimage.map_coordinates(chans[..., c], coords, order=1, mode="constant", cval=0.0)
                    for c in range(chans.shape[2])], axis=-1).reshape(h, w, -1)
    valid = ndimage.map_coordinates(np.asarray(hit, np.float64), coords, order=1, mode="constant",
                                    cval=0.0).reshape(h, w) > 1.0 - 1e-9
    return (out[..., 0] if img.ndim == 2 else out), valid


def latlong_index(dirs: np.ndarray, out_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Lat-long cell (col, row): longitude 0 at +Z (center column), +Y on top."""
    w, h = out_size
    lon = np.arctan2(dirs[..., 0], dirs[..., 2])
    lat = np.arccos(np.clip(dirs[..., 1], -1.0, 1.0))
    col = np.floor((lon / (2 * np.pi) + 0.5) * w).astype(np.int64) % w
    row = np.clip(np.floor(lat / np.pi * h).astype(np.int64), 0, h - 1)
    return col, row


def latlong_directions(out_size: tuple[int, int]) -> np.ndarray:
    w, h = out_size
    lon = ((np.arange(w) + 0.5) / w - 0.5) * 2 * np.pi
    lat = (np.arange(h) + 0.5) / h * np.pi
    lo, la = np.meshgrid(lon, lat)
    return np.stack([np.sin(la) * np.sin(lo), np.cos(la), np.sin(la) * np.cos(lo)], axis=-1)


def unwrap_sphere(image: np.ndarray, hit: np.ndarray, reflection: np.ndarray,
                  out_size: tuple[int, int] = (1024, 512)) -> tuple[np.ndarray, np.ndarray]:
    """Scatter hit pixels into a lat-long panorama by reflection direction.

    Each cell holds the mean of the pixels landing in it; cells nobody
    lands in are invalid (and zero).
    """
    w, h = out_size
    img = np.asarray(image, dtype=np.float64)
    ch = 1 if img.ndim == 2 else img.shape[2]
    acc = np.zeros((h * w, ch))
    cnt = np.zeros(h * w)
    m = np.asarray(hit, bool)
    if m.any():
        col, row = latlong_index(reflection[m], out_size)
        k = row * w + col
        np.add.at(acc, k, img[m].reshape(-1, ch))
        np.add.at(cnt, k, 1.0)
    valid = cnt > 0
    acc[valid] /= cnt[valid, None]
    pano = acc.reshape(h, w, ch)
    return (pano[..., 0] if img.ndim == 2 else pano), valid.reshape(h, w)


# ---------------------------------------------------------------------------
# scoring

@dataclass(frozen=True)
class Field:
    field_id: int
    payload: str
    kind: Kind


@dataclass(frozen=True, eq=False)
class Evidence:
    """One image shown to the attacker plus where each field appears in it."""

    name: str
    image: np.ndarray
    valid: np.ndarray | None = None
    boxes: dict[int, tuple[int, int, int, int]] = field(default_factory=dict)


def label_boxes(labels: np.ndarray) -> dict[int, tuple[int, int, int, int]]:
    """Bounding box (x0, y0, x1, y1) of every non-negative label."""
    out = {}
    for i in np.unique(labels):
        if i < 0:
            continue
        ys, xs = np.nonzero(labels == i)
        out[int(i)] = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    return out


@dataclass(frozen=True)
class FieldRecord:
    field_id: int
    payload: str
    kind: str
    decoded: str
    distance: int
    success: bool
    exact: bool
    evidence: str
    case: str = ""


def _overlap(a, b) -> int:
    return max(0, min(a[2], b[2]) - max(a[0], b[0])) * max(0, min(a[3], b[3]) - max(a[1], b[1]))


def _judge(f: Field, regions: list[Region], box) -> tuple[bool, str]:
    """Success flag and decoded string for one field in one evidence image."""
    near = sorted((r for r in regions if _overlap(r.bbox, box) > 0),
                  key=lambda r: -_overlap(r.bbox, box))
    if f.kind is Kind.TEXT:
        for r in near:
            if r.payload:
                return levenshtein(r.payload, f.payload) < SUCCESS_DISTANCE, r.payload
        return False, ""
    face = [r for r in near if r.kind is Kind.FACE and r.confidence >= FACE_MIN_CONFIDENCE]
    decoded = next((r.payload for r in near if r.payload), "")
    return bool(face), decoded or ""


def _run_detector(detector, ev: Evidence) -> list[Region]:
    if isinstance(detector, BuiltinDetector):
        return detector.detect_image(ev.image, 0, ev.valid)
    return list(detector(0, ev.image))


@dataclass
class ExtractionReport:
    records: list[FieldRecord] = field(default_factory=list)

    def rate(self, kind: str | None = None, case: str | None = None) -> float:
        sel = [r for r in self.records
               if (kind is None or r.kind == kind) and (case is None or r.case.startswith(case))]
        return sum(r.success for r in sel) / len(sel) if sel else 0.0

    def count(self, kind: str | None = None) -> int:
        return sum(1 for r in self.records if kind is None or r.kind == kind)

    @staticmethod
    def merge(reports) -> "ExtractionReport":
        return ExtractionReport([r for rep in reports for r in rep.records])

    def to_json(self) -> str:
        return json.dumps({
            "records": [asdict(r) for r in self.records],
            "rates": {"FACE": self.rate("FACE"), "TEXT": self.rate("TEXT"), "all": self.rate()},
            "counts": {"FACE": self.count("FACE"), "TEXT": self.count("TEXT")},
        }, indent=2, sort_keys=True)

    def table(self, title: str = "extraction success rate") -> str:
        rows = sorted({r.case for r in self.records})
        lines = [title, f"{'case':<28} {'face':>8} {'text':>8} {'all':>8}"]
        for c in rows:
            sub = ExtractionReport([r for r in self.records if r.case == c])
            cells = [f"{100 * sub.rate(k):7.2f}%" if sub.count(k) else "       -"
                     for k in ("FACE", "TEXT")]
            lines.append(f"{c:<28} {cells[0]:>8} {cells[1]:>8} {100 * sub.rate():7.2f}%")
        return "\n".join(lines)


def extract(evidence, fields, detector=None, case: str = "") -> ExtractionReport:
    """Score every ground-truth field against every evidence image.

    A field succeeds if any evidence image yields a success, so extra
    evidence can only help.
    """
    fields = list(fields)
    if not fields:
        raise ValueError("extract needs at least one ground-truth field")
    detector = detector or BuiltinDetector()
    per_ev = [(ev, _run_detector(detector, ev)) for ev in evidence]
    report = ExtractionReport()
    for f in fields:
        best = FieldRecord(f.field_id, f.payload, Kind(f.kind).value, "", len(f.payload),
                           False, False, "", case)
        for ev, regions in per_ev:
            box = ev.boxes.get(f.field_id)
            if box is None:
                continue
            ok, decoded = _judge(Field(f.field_id, f.payload, Kind(f.kind)), regions, box)
            rec = FieldRecord(f.field_id, f.payload, Kind(f.kind).value, decoded,
                              levenshtein(decoded, f.payload), ok, decoded == f.payload, ev.name, case)
            if (rec.success, rec.exact, -rec.distance) > (best.success, best.exact, -best.distance):
                best = rec
        report.records.append(best)
    return report
