"""Image decoding, grayscale conversion, resizing and masking.

Images are plain numpy arrays: RGB images have shape ``(H, W, 3)`` and gray
images ``(H, W)``, both float64 with values in [0, 1].
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass(frozen=True)
class MaskRect:
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"mask extent must be non-negative, got {self.w}x{self.h}")

    def to_text(self) -> str:
        return f"{self.x0},{self.y0},{self.w},{self.h}"

    @classmethod
    def from_text(cls, text: str) -> "MaskRect":
        parts = [int(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"mask rect needs 4 integers, got {text!r}")
        return cls(*parts)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Read one whitespace-delimited header token, skipping comments."""
    n = len(data)
    while pos < n:
        c = data[pos]
        if c == ord("#"):
            while pos < n and data[pos] not in b"\n\r":
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise DecodeError("truncated header", start)
    return data[start:pos], pos


def _decode_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    channels = 3 if magic == b"P6" else 1
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        token, new_pos = _read_token(data, pos)
        if not token.isdigit():
            raise DecodeError(f"malformed {name} {token!r}", pos)
        fields.append(int(token))
        pos = new_pos
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DecodeError(f"invalid dimensions {width}x{height}", 2)
    if not 0 < maxval < 256:
        raise DecodeError(f"unsupported maxval {maxval}", pos)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise DecodeError("missing whitespace after header", pos)
    pos += 1
    expected = width * height * channels
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise DecodeError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            pos + len(payload),
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / maxval
    if np.any(pixels > 1.0):
        bad = int(np.argmax(pixels > 1.0))
        raise DecodeError(f"sample exceeds maxval {maxval}", pos + bad)
    pixels = pixels.reshape(height, width, channels)
    if channels == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return pixels


def _decode_png(data: bytes) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            rgb = im.convert("RGB")
    except Exception as exc:  # Pillow raises a zoo of types
        raise DecodeError(f"PNG decode failed: {exc}", 0) from exc
    return np.asarray(rgb, dtype=np.float64) / 255.0


def decode_image(data: bytes) -> np.ndarray:
    """Decode a PNG or binary PPM/PGM file into an ``(H, W, 3)`` array in [0, 1].

    Grayscale sources are replicated across the three channels.
    """
    if data.startswith(_PNG_MAGIC):
        return _decode_png(data)
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data)
    raise DecodeError("unrecognised image signature", 0)


def encode_pgm(gray: np.ndarray) -> bytes:
    """Encode a gray image as binary PGM (P5, maxval 255)."""
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    q = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w, _ = rgb.shape
    q = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma."""
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and border clamping."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    # convex combinations can overshoot by an ulp
    return np.clip(out, img.min(), img.max())


def apply_masks(img: np.ndarray, rects) -> np.ndarray:
    """Zero every pixel covered by any rectangle (clipped to the image)."""
    out = np.array(img, dtype=np.float64, copy=True)
    h, w = out.shape
    for r in rects:
        xa, ya = max(r.x0, 0), max(r.y0, 0)
        xb, yb = min(r.x0 + r.w, w), min(r.y0 + r.h, h)
        if xa < xb and ya < yb:
            out[ya:yb, xa:xb] = 0.0
    return out


def load_gray(path, size: int | None = None) -> np.ndarray:
    """Read an image file, convert to gray and optionally resize to ``size``²."""
    gray = to_grayscale(decode_image(Path(path).read_bytes()))
    if size is not None:
        gray = resize_bilinear(gray, size, size)
    return gray
