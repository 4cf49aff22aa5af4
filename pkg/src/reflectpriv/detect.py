"""Sensitive-region detectors.

The built-in detector finds plaque glyphs in an image: bright connected
components are candidate quiet borders, their outline gives a quad, a
homography samples the 20x20 cell grid, and the glyph decoder validates
finders and checksum. External detectors speak a line-delimited JSON
protocol over stdin/stdout.
"""

from __future__ import annotations

import json
import queue
import subprocess
import tempfile
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import glyph
from .color import luminance
from .geom import GeometryError, apply_homography, homography_from_points
from .glyph import Kind


class DetectorUnavailable(RuntimeError):
    """External detector crashed, exited, timed out, or spoke garbage."""


@dataclass(frozen=True)
class Region:
    """Detected sensitive area; bbox is (x0, y0, x1, y1), inclusive-exclusive."""

    frame_id: int
    bbox: tuple[int, int, int, int]
    kind: Kind
    confidence: float
    payload: str | None = None

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"empty bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "kind", Kind(self.kind))

    def clipped(self, width: int, height: int) -> "Region":
        x0, y0, x1, y1 = self.bbox
        box = (max(0, x0), max(0, y0), min(width, x1), min(height, y1))
        return Region(self.frame_id, box, self.kind, self.confidence, self.payload)

    def overlaps(self, box) -> bool:
        x0, y0, x1, y1 = self.bbox
        a0, b0, a1, b1 = box
        return x0 < a1 and a0 < x1 and y0 < b1 and b0 < y1

    def to_json(self) -> dict:
        d = {"bbox": list(map(int, self.bbox)), "class": self.kind.value.lower(),
             "confidence": float(self.confidence)}
        if self.payload is not None:
            d["payload"] = self.payload
        return d


def _quad_candidates(ys: np.ndarray, xs: np.ndarray) -> list[np.ndarray]:
    """Corner quads (TL, TR, BR, BL order in pixel-corner coordinates)."""
    s, d = xs + ys, xs - ys
    diag = np.array([
        [xs[np.argmin(s)], ys[np.argmin(s)]],
        [xs[np.argmax(d)] + 1, ys[np.argmax(d)]],
        [xs[np.argmax(s)] + 1, ys[np.argmax(s)] + 1],
        [xs[np.argmin(d)], ys[np.argmin(d)] + 1],
    ], dtype=np.float64)
    axis = np.array([
        [xs[np.argmin(ys)] + 0.5, ys.min()],
        [xs.max() + 1, ys[np.argmax(xs)] + 0.5],
        [xs[np.argmax(ys)] + 0.5, ys.max() + 1],
        [xs.min(), ys[np.argmin(xs)] + 0.5],
    ], dtype=np.float64)
    return [diag, axis]


def _poly_area(q: np.ndarray) -> float:
    x, y = q[:, 0], q[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _refine_quad(mask: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Fit a line to the outline pixels along each side and re-intersect.

    ``mask`` is the filled component; ``quad`` an initial TL, TR, BR, BL
    guess in the mask's pixel-corner coordinates.
    """
    edge = mask & ~ndimage.binary_erosion(mask)
    ys, xs = np.nonzero(edge)
    pts = np.stack([xs + 0.5, ys + 0.5], axis=1)
    center = quad.mean(axis=0)
    lines = []
    for i in range(4):
        a, b = quad[i], quad[(i + 1) % 4]
        d = b - a
        length = np.linalg.norm(d)
        if length < 4:
            return quad
        d = d / length
        n = np.array([d[1], -d[0]])
        if np.dot(center - a, n) > 0:
            n = -n  # outward
        rel = pts - a
        along = rel @ d
        off = rel @ n
        sel = (along > 0.15 * length) & (along < 0.85 * length) & (np.abs(off) < max(2.0, 0.08 * length))
        if sel.sum() < 5:
            return quad
        p = pts[sel]
        mu = p.mean(axis=0)
        _, _, vt = np.linalg.svd(p - mu)
        dirn = vt[0]
        nn = np.array([dirn[1], -dirn[0]])
        if np.dot(nn, n) < 0:
            nn = -nn
        lines.append((mu + 0.5 * nn, dirn))  # outline pixel centers sit half a pixel inside
    out = np.empty_like(quad)
    for i in range(4):
        (p1, d1), (p2, d2) = lines[i - 1], lines[i]
        m = np.array([d1, -d2]).T
        if abs(np.linalg.det(m)) < 1e-6:
            return quad
        t = np.linalg.solve(m, p2 - p1)
        out[i] = p1 + t[0] * d1
    if np.max(np.abs(out - quad)) > 0.1 * np.ptp(quad, axis=0).max():
        return quad
    return out


_OFFS = np.array([-0.25, 0.0, 0.25])


_INSETS = (0.0, 1.0, 2.0, -1.0, 3.0)


def _inset(quad: np.ndarray, d: float) -> np.ndarray:
    """Shrink a quad by about ``d`` pixels per side toward its centroid."""
    if d == 0:
        return quad
    c = quad.mean(axis=0)
    side = np.mean(np.linalg.norm(quad - np.roll(quad, 1, axis=0), axis=1))
    return c + (quad - c) * (1.0 - 2.0 * d / side)


def sample_grid(lum: np.ndarray, quad: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Mean luminance of each glyph cell inside ``quad`` (NaN where unsampled)."""
    n = glyph.GRID
    src = np.array([[0, 0], [n, 0], [n, n], [0, n]], dtype=np.float64)
    h = homography_from_points(src, quad)
    c = np.arange(n) + 0.5
    gx = (c[None, :, None, None] + _OFFS[None, None, None, :]) * np.ones((n, 1, 3, 1))
    gy = (c[:, None, None, None] + _OFFS[None, None, :, None]) * np.ones((1, n, 1, 3))
    pts = np.stack(np.broadcast_arrays(gx, gy), axis=-1).reshape(-1, 2)
    xy = apply_homography(h, pts)
    xi = np.floor(xy[:, 0]).astype(np.int64)
    yi = np.floor(xy[:, 1]).astype(np.int64)
    H, W = lum.shape
    ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
    vals = np.full(len(pts), np.nan)
    vals[ok] = lum[yi[ok], xi[ok]]
    if valid is not None:
        bad = np.zeros(len(pts), dtype=bool)
        bad[ok] = ~valid[yi[ok], xi[ok]]
        vals[bad] = np.nan
    vals = vals.reshape(n, n, 9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN cells stay NaN
        return np.nanmean(vals, axis=-1)


def _finder_quad(lum: np.ndarray, quad: np.ndarray, thr: float) -> np.ndarray | None:
    """Re-fit the glyph outline to the centroids of the dark corner finders.

    Finder blocks sit inside a light separator ring, so each one is its own
    dark component and its centroid is far steadier than a ragged outline.
    Needs at least three finders; returns None otherwise.
    """
    n = glyph.GRID
    src = np.array([[0, 0], [n, 0], [n, n], [0, n]], dtype=np.float64)
    h = homography_from_points(src, quad)
    cell2 = _poly_area(quad) / n ** 2
    x0, y0 = np.floor(quad.min(axis=0)).astype(int) - 2
    x1, y1 = np.ceil(quad.max(axis=0)).astype(int) + 2
    x0, y0 = max(x0, 0), max(y0, 0)
    labels, _ = ndimage.label(lum[y0:y1, x0:x1] < thr)
    lo = glyph.BORDER + glyph.FINDER / 2
    hi = n - lo
    grid_pts, img_pts = [], []
    for g in ((lo, lo), (hi, lo), (hi, hi), (lo, hi)):
        px = apply_homography(h, np.array([g], dtype=np.float64))[0] - (x0, y0)
        xi, yi = int(np.floor(px[0])), int(np.floor(px[1]))
        if not (0 <= yi < labels.shape[0] and 0 <= xi < labels.shape[1]) or labels[yi, xi] == 0:
            continue
        ys, xs = np.nonzero(labels == labels[yi, xi])
        full = glyph.FINDER ** 2 * cell2
        span = max(np.ptp(xs), np.ptp(ys)) + 1
        if not (0.5 * full <= len(xs) <= 1.6 * full and span <= 4.5 * np.sqrt(cell2)):
            continue
        grid_pts.append(g)
        img_pts.append((xs.mean() + 0.5 + x0, ys.mean() + 0.5 + y0))
    if len(grid_pts) < 3:
        return None
    g, p = np.array(grid_pts), np.array(img_pts)
    if len(g) == 4:
        return apply_homography(homography_from_points(g, p), src)
    a, *_ = np.linalg.lstsq(np.c_[g, np.ones(len(g))], p, rcond=None)
    return np.c_[src, np.ones(4)] @ a


@dataclass
class BuiltinDetector:
    """Plaque detector for linear-light images.

    ``bright`` is the luminance threshold for quiet-border candidates,
    ``min_finder`` the finder agreement below which a candidate is dropped.
    """

    bright: float = 0.8
    min_side: int = 20
    min_contrast: float = 0.3
    min_border: float = 0.9
    min_finder: float = 0.75

    def detect_image(self, image: np.ndarray, frame_id: int = 0,
                     valid: np.ndarray | None = None) -> list[Region]:
        lum = luminance(image)
        mask = lum > self.bright
        if valid is not None:
            mask &= valid
        labels, _ = ndimage.label(mask)
        H, W = lum.shape
        regions = []
        for i, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            y0, y1, x0, x1 = sl[0].start, sl[0].stop, sl[1].start, sl[1].stop
            if min(y1 - y0, x1 - x0) < self.min_side:
                continue
            if y0 == 0 or x0 == 0 or y1 == H or x1 == W:
                continue  # clipped by the frame: outline unknown
            filled = ndimage.binary_fill_holes(labels[sl] == i)
            # shave one-pixel spurs so stray border texels do not drag the corners
            opened = ndimage.binary_opening(filled, np.ones((3, 3), bool))
            if opened.sum() > 0.5 * filled.sum():
                filled = opened
            area = float(filled.sum())
            if area < 0.5 * (y1 - y0) * (x1 - x0) and area < 400:
                continue
            ys, xs = np.nonzero(filled)
            quad = min(_quad_candidates(ys, xs), key=lambda q: abs(_poly_area(q) - area))
            quad = _refine_quad(filled, quad) + [x0, y0]
            if _poly_area(quad) < 0.8 * area:
                continue
            region = None
            # reflections bleed the bright outline by a pixel or two; retry inset
            for d in _INSETS + (None,):
                q = quad if d is None else _inset(quad, d)
                r = self._read(lum, valid, q, frame_id, (x0, y0, x1, y1), align=d is None)
                if r is not None and (region is None or r.payload):
                    region = r
                if region is not None and region.payload:
                    break
            if region is not None:
                regions.append(region)
        return regions

    def _read(self, lum, valid, quad, frame_id, bbox, align: bool = True) -> Region | None:
        try:
            cells = sample_grid(lum, quad, valid)
        except GeometryError:
            return None
        if np.isnan(cells).mean() > 0.05:
            return None
        b = glyph.BORDER
        ring = np.ones_like(cells, dtype=bool)
        ring[b:-b, b:-b] = False
        white = np.nanmedian(cells[ring])
        inner = cells[b:-b, b:-b]
        dark = np.nanpercentile(inner, 5)
        if white - dark < self.min_contrast:
            return None
        thr = 0.5 * (white + dark)
        grid = np.where(np.isnan(cells), False, cells < thr)
        if np.mean(~grid[ring]) < self.min_border:
            return None
        payload, kind, score = glyph.decode_grid(grid)
        if payload is None and align:
            fq = _finder_quad(lum, quad, thr)
            if fq is not None:
                again = self._read(lum, valid, fq, frame_id, bbox, align=False)
                if again is not None and again.payload:
                    return again
        if payload is None and score < self.min_finder:
            return None
        return Region(frame_id, tuple(int(v) for v in bbox), kind, 1.0 if payload else score, payload)

    def __call__(self, frame_id: int, image: np.ndarray) -> list[Region]:
        return self.detect_image(image, frame_id)


def parse_regions(obj: dict, frame_id: int) -> list[Region]:
    """Regions from one protocol response line (already JSON-decoded)."""
    if not isinstance(obj, dict) or int(obj.get("frame_id", -1)) != frame_id:
        raise DetectorUnavailable(f"detector answered for the wrong frame (expected {frame_id})")
    out = []
    for r in obj.get("regions", []):
        kind = str(r["class"]).upper()
        out.append(Region(frame_id, tuple(int(v) for v in r["bbox"]), Kind(kind),
                          float(r.get("confidence", 1.0)), r.get("payload")))
    return out


class ExternalDetector:
    """Runs a user command speaking the detector wire protocol.

    For each frame one request line ``{"frame_id": n, "rgb_path": "..."}`` is
    written to the command's stdin and one response line
    ``{"frame_id": n, "regions": [...]}`` is read from its stdout. Frames
    without a known path are written to a temporary PNG first.
    """

    def __init__(self, command: str | list[str], timeout: float = 10.0,
                 rgb_paths: dict[int, str] | None = None):
        self.command = command
        self.timeout = timeout
        self.rgb_paths = dict(rgb_paths or {})
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._tmp: tempfile.TemporaryDirectory | None = None

    def _start(self):
        try:
            self._proc = subprocess.Popen(self.command, shell=isinstance(self.command, str),
                                          stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          stderr=subprocess.DEVNULL, text=True, bufsize=1)
        except OSError as e:
            raise DetectorUnavailable(f"cannot start detector: {e}") from e

        def pump(stream, q):
            for line in stream:
                q.put(line)
            q.put(None)

        threading.Thread(target=pump, args=(self._proc.stdout, self._lines), daemon=True).start()

    def _path_for(self, frame_id: int, image: np.ndarray | None) -> str:
        if frame_id in self.rgb_paths:
            return str(self.rgb_paths[frame_id])
        if image is None:
            raise DetectorUnavailable(f"no image for frame {frame_id}")
        from PIL import Image

        from .color import encode_u8
        if self._tmp is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="reflectpriv-det-")
        path = Path(self._tmp.name) / f"{frame_id:06d}.rgb.png"
        Image.fromarray(encode_u8(image)).save(path)
        return str(path)

    def __call__(self, frame_id: int, image: np.ndarray | None = None) -> list[Region]:
        if self._proc is None:
            self._start()
        req = json.dumps({"frame_id": int(frame_id), "rgb_path": self._path_for(frame_id, image)})
        try:
            self._proc.stdin.write(req + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise DetectorUnavailable(f"detector closed its input: {e}") from e
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise DetectorUnavailable(f"detector timed out after {self.timeout} s") from None
        if line is None:
            code = self._proc.wait()
            raise DetectorUnavailable(f"detector exited with code {code}")
        try:
            return parse_regions(json.loads(line), frame_id)
        except (ValueError, KeyError, TypeError) as e:
            raise DetectorUnavailable(f"malformed detector response: {e}") from e

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc = None
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
