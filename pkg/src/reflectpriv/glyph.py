"""Plaque glyphs: a machine-checkable stand-in for faces and text.

A glyph is a 20x20 cell bitmap. A 2-cell light quiet border surrounds a
16x16 inner grid whose 4x4 corner blocks hold solid 3x3 finder squares
(three for TEXT, four for FACE). The remaining 192 inner cells carry, in
row-major order: 16 characters at 6 bits each, a CRC-8 over the
characters and kind, 84 Reed-Solomon parity bits, and 4 zero bits, all
XORed with a fixed whitening mask.

The code works on 6-bit symbols: 16 characters plus the CRC split over two
symbols (its last two bits share a symbol with the zero bits) form the
message, and 14 parity symbols let the decoder repair up to 7 damaged
symbols. Decoding tries all eight dihedral orientations, so mirrored
reflections decode as well.
"""

from __future__ import annotations

import enum

import numpy as np
from reedsolo import ReedSolomonError, RSCodec

CHARSET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 "
PAD = 63
MAX_LEN = 16
BORDER = 2
INNER = 16
GRID = INNER + 2 * BORDER
FINDER = 3
BLOCK = 4

DARK_LEVEL = 0.05
LIGHT_LEVEL = 0.95


class GlyphError(ValueError):
    pass


class Kind(str, enum.Enum):
    TEXT = "TEXT"
    FACE = "FACE"


def validate_payload(payload: str) -> None:
    if not payload:
        raise GlyphError("payload must be non-empty")
    if len(payload) > MAX_LEN:
        raise GlyphError(f"payload longer than {MAX_LEN} characters: {payload!r}")
    bad = sorted(set(c for c in payload if c not in CHARSET))
    if bad:
        raise GlyphError(f"characters outside A-Z, 0-9, space: {bad}")


def _crc8(data: bytes) -> int:
    crc = 0
    for b in data:
        crc ^= b
        for _ in range(8):
            crc = ((crc << 1) ^ 0x07) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
    return crc


def _bits(value: int, n: int) -> list[int]:
    return [(value >> (n - 1 - i)) & 1 for i in range(n)]


def _corner_blocks() -> dict[str, tuple[slice, slice]]:
    lo, hi = slice(0, BLOCK), slice(INNER - BLOCK, INNER)
    return {"tl": (lo, lo), "tr": (lo, hi), "bl": (hi, lo), "br": (hi, hi)}


def _finder_template(kind: Kind) -> tuple[np.ndarray, np.ndarray]:
    """Expected inner-grid values and mask of the four corner blocks."""
    expect = np.zeros((INNER, INNER), dtype=bool)
    mask = np.zeros((INNER, INNER), dtype=bool)
    corners = ["tl", "tr", "bl"] + (["br"] if kind == Kind.FACE else [])
    for name, (rs, cs) in _corner_blocks().items():
        mask[rs, cs] = True
        if name in corners:
            r0 = 0 if name[0] == "t" else INNER - FINDER
            c0 = 0 if name[1] == "l" else INNER - FINDER
            expect[r0:r0 + FINDER, c0:c0 + FINDER] = True
    return expect, mask


_TEMPLATES = {k: _finder_template(k) for k in Kind}
_DATA_MASK = ~_TEMPLATES[Kind.TEXT][1]
DATA_CELLS = int(_DATA_MASK.sum())
PARITY_SYMBOLS = 14
_MSG_SYMBOLS = MAX_LEN + 2
_RS = RSCodec(PARITY_SYMBOLS, nsize=_MSG_SYMBOLS + PARITY_SYMBOLS, c_exp=6)
# fixed whitening mask keeps dark/light cells balanced for short payloads
_WHITEN = np.random.default_rng(0x51A7E).integers(0, 2, DATA_CELLS).astype(bool)


def _message(codes: list[int], crc: int) -> list[int]:
    return codes + [crc >> 2, (crc & 3) << 4]


def _payload_bits(payload: str, kind: Kind) -> np.ndarray:
    codes = [CHARSET.index(c) for c in payload] + [PAD] * (MAX_LEN - len(payload))
    crc = _crc8(bytes(codes) + kind.value.encode())
    parity = list(_RS.encode(bytearray(_message(codes, crc))))[_MSG_SYMBOLS:]
    bits: list[int] = []
    for c in codes:
        bits += _bits(c, 6)
    bits += _bits(crc, 8)
    for p in parity:
        bits += _bits(p, 6)
    bits += [0, 0, 0, 0]
    return np.array(bits, dtype=bool) ^ _WHITEN


def encode_plaque(payload: str, kind: Kind | str) -> np.ndarray:
    """(20, 20) boolean bitmap, True = dark cell."""
    kind = Kind(kind)
    validate_payload(payload)
    inner = _TEMPLATES[kind][0].copy()
    inner[_DATA_MASK] = _payload_bits(payload, kind)
    out = np.zeros((GRID, GRID), dtype=bool)
    out[BORDER:BORDER + INNER, BORDER:BORDER + INNER] = inner
    return out


def dihedral(grid: np.ndarray) -> list[np.ndarray]:
    """All eight rotations/reflections of a square array."""
    out = []
    for g in (grid, grid[:, ::-1]):
        for k in range(4):
            out.append(np.rot90(g, k))
    return out


def finder_match(inner: np.ndarray, kind: Kind) -> float:
    """Fraction of corner-block cells agreeing with the finder layout of ``kind``."""
    expect, mask = _TEMPLATES[kind]
    return float(np.mean(inner[mask] == expect[mask]))


def _value(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def _decode_oriented(inner: np.ndarray, kind: Kind) -> str | None:
    bits = inner[_DATA_MASK] ^ _WHITEN
    codes = [_value(bits[6 * i:6 * i + 6]) for i in range(MAX_LEN)]
    crc = _value(bits[96:104])
    parity = [_value(bits[104 + 6 * i:110 + 6 * i]) for i in range(PARITY_SYMBOLS)]
    word = _message(codes, crc)
    word[-1] |= _value(bits[-4:])
    try:
        msg = list(_RS.decode(bytearray(word + parity))[0])
    except ReedSolomonError:
        return None
    codes, crc, spare = msg[:MAX_LEN], (msg[MAX_LEN] << 2) | (msg[MAX_LEN + 1] >> 4), msg[-1] & 15
    if spare or crc != _crc8(bytes(codes) + kind.value.encode()):
        return None
    n = codes.index(PAD) if PAD in codes else MAX_LEN
    if n == 0 or any(c >= len(CHARSET) for c in codes[:n]) or any(c != PAD for c in codes[n:]):
        return None
    return "".join(CHARSET[c] for c in codes[:n])


def decode_grid(grid: np.ndarray) -> tuple[str | None, Kind, float]:
    """Decode a sampled (20, 20) or inner (16, 16) boolean grid.

    Returns ``(payload, kind, finder_fraction)``. ``payload`` is None when no
    orientation passes the checksum; ``kind`` and ``finder_fraction`` then
    describe the best-matching finder layout.
    """
    grid = np.asarray(grid, dtype=bool)
    if grid.shape == (GRID, GRID):
        grid = grid[BORDER:BORDER + INNER, BORDER:BORDER + INNER]
    if grid.shape != (INNER, INNER):
        raise GlyphError(f"expected a {GRID}x{GRID} or {INNER}x{INNER} grid, got {grid.shape}")
    best = (-1.0, Kind.TEXT)
    for g in dihedral(grid):
        for kind in (Kind.FACE, Kind.TEXT):
            score = finder_match(g, kind)
            if score > best[0]:
                best = (score, kind)
            # kind is bound into the CRC, so a wrong kind cannot pass
            payload = _decode_oriented(g, kind)
            if payload is not None:
                return payload, kind, 1.0
    return None, best[1], best[0]


def decode(bitmap: np.ndarray) -> str:
    """Strict decode of an encoded bitmap; raises GlyphError on failure."""
    payload, _, _ = decode_grid(bitmap)
    if payload is None:
        raise GlyphError("glyph failed checksum")
    return payload


def render_cells(bitmap: np.ndarray, cell_px: int) -> np.ndarray:
    """Upsample a bitmap to a luminance image with ``cell_px`` pixels per cell."""
    img = np.where(bitmap, DARK_LEVEL, LIGHT_LEVEL)
    return np.kron(img, np.ones((cell_px, cell_px)))
