"""On-disk formats shared by the pipeline stages.

A session directory holds ``manifest.json`` plus ``frames/NNNNNN.rgb.png``
(8-bit sRGB), ``NNNNNN.depth.png`` (16-bit millimeters, 0 = invalid) and
``NNNNNN.conf.png`` (8-bit, values 0..2). The manifest records a sha256 per
file. Cubemaps use a raw little-endian float32 format::

    magic "RGCM" | uint32 face size | uint32 channels | uint32 version | 8 zero bytes
    then faces in +X,-X,+Y,-Y,+Z,-Z order, each channel-planar, rows t, cols s

The cubemap center is not stored; it is the session anchor.

Rendered images use a similar raw container (magic "RGIM") so defended and
undefended renders can be compared without 8-bit loss.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .color import decode_u8, encode_u8, tonemap_u8
from .envmap import Cubemap
from .geom import Intrinsics, RigidTransform
from .pointcloud import ProvenancedPointCloud
from .render import RenderResult
from .scene import CaptureFrame

MANIFEST = "manifest.json"
CUBE_MAGIC = b"RGCM"
IMAGE_MAGIC = b"RGIM"
FORMAT_VERSION = 1


class SessionError(IOError):
    """Missing or unreadable artifact."""


class CorruptSessionError(SessionError):
    """Artifact present but inconsistent (checksum, size, or header)."""


@dataclass(frozen=True)
class FrameEntry:
    frame_id: int
    pose: tuple[float, ...]  # row-major 4x4
    rgb: str
    depth: str
    confidence: str
    sha256: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SessionManifest:
    session_id: str
    intrinsics_rgb: Intrinsics
    intrinsics_depth: Intrinsics
    anchor: tuple[float, float, float]
    frames: tuple[FrameEntry, ...] = ()

    def __post_init__(self):
        ids = [f.frame_id for f in self.frames]
        if ids != sorted(set(ids)):
            raise SessionError("frame ids must be unique and sorted")

    @classmethod
    def for_frames(cls, session_id: str, frames, anchor) -> "SessionManifest":
        frames = list(frames)
        if not frames:
            raise SessionError("a session needs at least one frame")
        entries = tuple(FrameEntry(f.frame_id, tuple(f.pose.matrix().ravel().tolist()),
                                   *_frame_paths(f.frame_id)) for f in frames)
        return cls(session_id, frames[0].intrinsics_rgb, frames[0].intrinsics_depth,
                   tuple(float(a) for a in anchor), entries)

    def to_json(self) -> str:
        def intr(i: Intrinsics):
            return {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy, "width": i.width, "height": i.height}

        obj = {
            "version": FORMAT_VERSION,
            "session_id": self.session_id,
            "intrinsics": {"rgb": intr(self.intrinsics_rgb), "depth": intr(self.intrinsics_depth)},
            "anchor": list(self.anchor),
            "frames": [{"frame_id": f.frame_id, "pose": list(f.pose), "rgb": f.rgb, "depth": f.depth,
                        "confidence": f.confidence, "sha256": dict(sorted(f.sha256.items()))}
                       for f in self.frames],
        }
        return json.dumps(obj, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, source: str = MANIFEST) -> "SessionManifest":
        try:
            obj = json.loads(text)
            intr = lambda d: Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]),  # noqa: E731
                                        float(d["cy"]), int(d["width"]), int(d["height"]))
            frames = tuple(FrameEntry(int(f["frame_id"]), tuple(float(x) for x in f["pose"]), f["rgb"],
                                      f["depth"], f["confidence"], dict(f.get("sha256", {})))
                           for f in obj["frames"])
            return cls(obj["session_id"], intr(obj["intrinsics"]["rgb"]), intr(obj["intrinsics"]["depth"]),
                       tuple(float(a) for a in obj["anchor"]), frames)
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptSessionError(f"{source}: malformed manifest ({e})") from None


def _frame_paths(frame_id: int) -> tuple[str, str, str]:
    stem = f"frames/{frame_id:06d}"
    return f"{stem}.rgb.png", f"{stem}.depth.png", f"{stem}.conf.png"


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def write_session(frames, manifest: SessionManifest, directory) -> SessionManifest:
    """Write frames and manifest; returns the manifest with checksums filled in."""
    directory = Path(directory)
    frames = sorted(frames, key=lambda f: f.frame_id)
    by_id = {e.frame_id: e for e in manifest.frames}
    if sorted(by_id) != [f.frame_id for f in frames]:
        raise SessionError("manifest frame ids do not match the frames")
    entries = []
    for f in frames:
        e = by_id[f.frame_id]
        depth_mm = np.round(np.asarray(f.depth) * 1000.0)
        if depth_mm.min() < 0 or depth_mm.max() > 65535:
            raise SessionError(f"frame {f.frame_id}: depth outside the 16-bit millimeter range")
        blobs = {
            e.rgb: _png_bytes(encode_u8(f.rgb)),
            e.depth: _png_bytes(depth_mm.astype(np.uint16)),
            e.confidence: _png_bytes(np.asarray(f.confidence, np.uint8)),
        }
        for rel, data in blobs.items():
            write_bytes(directory / rel, data)
        entries.append(FrameEntry(f.frame_id, tuple(f.pose.matrix().ravel().tolist()), e.rgb, e.depth,
                                  e.confidence, {k: _sha(v) for k, v in blobs.items()}))
    out = SessionManifest(manifest.session_id, manifest.intrinsics_rgb, manifest.intrinsics_depth,
                          manifest.anchor, tuple(entries))
    write_bytes(directory / MANIFEST, out.to_json().encode())
    return out


def _load_png(directory: Path, rel: str, sha: str | None) -> np.ndarray:
    path = directory / rel
    if not path.is_file():
        raise SessionError(f"missing session file: {path}")
    data = path.read_bytes()
    if sha is not None and _sha(data) != sha:
        raise CorruptSessionError(f"checksum mismatch: {path}")
    try:
        return np.asarray(Image.open(io.BytesIO(data)))
    except OSError as e:
        raise CorruptSessionError(f"unreadable image {path}: {e}") from None


def read_session(directory) -> tuple[SessionManifest, list[CaptureFrame]]:
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise SessionError(f"missing session manifest: {mpath}")
    manifest = SessionManifest.from_json(mpath.read_text(), str(mpath))
    frames = []
    for e in manifest.frames:
        rgb = _load_png(directory, e.rgb, e.sha256.get(e.rgb))
        depth = _load_png(directory, e.depth, e.sha256.get(e.depth))
        conf = _load_png(directory, e.confidence, e.sha256.get(e.confidence))
        if rgb.ndim != 3 or rgb.dtype != np.uint8 or depth.dtype not in (np.uint16, np.int32):
            raise CorruptSessionError(f"unexpected image format in frame {e.frame_id}")
        frames.append(CaptureFrame(e.frame_id, decode_u8(rgb).astype(np.float32),
                                   depth.astype(np.float64) / 1000.0, conf.astype(np.uint8),
                                   RigidTransform.from_matrix(e.pose), manifest.intrinsics_rgb,
                                   manifest.intrinsics_depth))
    return manifest, frames


# ---------------------------------------------------------------------------
# cubemaps and renders

_CUBE_HEADER = struct.Struct("<4sIII8x")


def cubemap_bytes(cm: Cubemap) -> bytes:
    faces = np.asarray(cm.faces, dtype="<f4")
    r, c = faces.shape[1], faces.shape[3]
    head = _CUBE_HEADER.pack(CUBE_MAGIC, r, c, FORMAT_VERSION)
    return head + np.ascontiguousarray(faces.transpose(0, 3, 1, 2)).tobytes()


def write_cubemap(cm: Cubemap, path) -> None:
    write_bytes(path, cubemap_bytes(cm))


def read_cubemap(path, center=(0.0, 0.0, 0.0)) -> Cubemap:
    path = Path(path)
    if not path.is_file():
        raise SessionError(f"missing cubemap file: {path}")
    data = path.read_bytes()
    if len(data) < _CUBE_HEADER.size:
        raise CorruptSessionError(f"{path}: truncated header")
    magic, r, c, version = _CUBE_HEADER.unpack_from(data)
    if magic != CUBE_MAGIC:
        raise CorruptSessionError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptSessionError(f"{path}: unsupported version {version}")
    want = 6 * r * r * c * 4
    if r < 1 or c < 1 or len(data) - _CUBE_HEADER.size != want:
        raise CorruptSessionError(f"{path}: header says 6x{r}x{r}x{c} floats but payload has "
                                  f"{len(data) - _CUBE_HEADER.size} bytes")
    planar = np.frombuffer(data, dtype="<f4", offset=_CUBE_HEADER.size).reshape(6, c, r, r)
    faces = planar.transpose(0, 2, 3, 1).astype(np.float32)
    return Cubemap(faces, tuple(float(x) for x in center))


_IMAGE_HEADER = struct.Struct("<4sII")


def write_render(res: RenderResult, path) -> None:
    """Color (float32 planar), hit mask (uint8), reflection (float32 planar)."""
    h, w = res.hit.shape
    body = [np.ascontiguousarray(np.asarray(res.color, "<f4").transpose(2, 0, 1)).tobytes(),
            np.asarray(res.hit, np.uint8).tobytes(),
            np.ascontiguousarray(np.asarray(res.reflection, "<f4").transpose(2, 0, 1)).tobytes()]
    write_bytes(path, _IMAGE_HEADER.pack(IMAGE_MAGIC, w, h) + b"".join(body))


def read_render(path) -> RenderResult:
    path = Path(path)
    if not path.is_file():
        raise SessionError(f"missing render file: {path}")
    data = path.read_bytes()
    if len(data) < _IMAGE_HEADER.size:
        raise CorruptSessionError(f"{path}: truncated header")
    magic, w, h = _IMAGE_HEADER.unpack_from(data)
    n = w * h
    if magic != IMAGE_MAGIC or len(data) != _IMAGE_HEADER.size + n * (12 + 1 + 12):
        raise CorruptSessionError(f"{path}: header and payload size disagree")
    off = _IMAGE_HEADER.size
    color = np.frombuffer(data, "<f4", 3 * n, off).reshape(3, h, w).transpose(1, 2, 0)
    off += 12 * n
    hit = np.frombuffer(data, np.uint8, n, off).reshape(h, w).astype(bool)
    off += n
    refl = np.frombuffer(data, "<f4", 3 * n, off).reshape(3, h, w).transpose(1, 2, 0)
    return RenderResult(color.astype(np.float32), hit, refl.astype(np.float32))


# ---------------------------------------------------------------------------
# point clouds

def write_cloud(pc: ProvenancedPointCloud, path) -> None:
    """Lossless binary cloud (numpy .npz, no pickled objects)."""
    buf = io.BytesIO()
    np.savez(buf, positions=pc.positions, colors=pc.colors, confidence=pc.confidence,
             provenance=pc.provenance)
    write_bytes(path, buf.getvalue())


def read_cloud(path) -> ProvenancedPointCloud:
    path = Path(path)
    if not path.is_file():
        raise SessionError(f"missing point cloud file: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            return ProvenancedPointCloud(z["positions"], z["colors"], z["confidence"], z["provenance"])
    except (OSError, KeyError, ValueError) as e:
        raise CorruptSessionError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# previews

def cubemap_preview(cm: Cubemap) -> np.ndarray:
    """Horizontal-cross layout (4R x 3R), display gamma, black where empty."""
    r = cm.resolution
    out = np.zeros((3 * r, 4 * r, 3), np.uint8)
    faces = tonemap_u8(cm.faces)
    # +Y on top, -Y at the bottom, middle row -X +Z +X -Z
    for f, (row, col) in {2: (0, 1), 1: (1, 0), 4: (1, 1), 0: (1, 2), 5: (1, 3), 3: (2, 1)}.items():
        out[row * r:(row + 1) * r, col * r:(col + 1) * r] = faces[f]
    return out


def write_png(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = encode_u8(img)
    write_bytes(path, _png_bytes(img))
