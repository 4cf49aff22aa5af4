"""sRGB transfer curve and tone mapping helpers."""

import numpy as np


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1 / 2.4) - 0.055)


_LUT = srgb_to_linear(np.arange(256) / 255.0)


def encode_u8(linear) -> np.ndarray:
    """Linear [0, 1] floats to 8-bit sRGB codes."""
    return np.round(linear_to_srgb(linear) * 255.0).astype(np.uint8)


def decode_u8(codes) -> np.ndarray:
    """8-bit sRGB codes to linear floats (exact inverse of encode_u8 on its range)."""
    return _LUT[np.asarray(codes, dtype=np.uint8)]


def quantize(linear) -> np.ndarray:
    """Snap linear colors onto the 8-bit sRGB storage grid."""
    return decode_u8(encode_u8(linear))


def tonemap_u8(img, gamma: float = 2.2) -> np.ndarray:
    """Clamp to [0, 1] and apply display gamma; used for PNG previews."""
    x = np.clip(np.nan_to_num(np.asarray(img, dtype=np.float64)), 0.0, 1.0)
    return np.round(255.0 * x ** (1.0 / gamma)).astype(np.uint8)


def luminance(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return rgb @ np.array([0.2126, 0.7152, 0.0722])
