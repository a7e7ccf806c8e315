"""Hierarchical HOG and uniform-LBP descriptors of a gray image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HogConfig:
    levels: int = 4
    bins: int = 9

    def __post_init__(self):
        if self.levels < 1 or self.bins < 1:
            raise ValueError("HOG levels and bins must be >= 1")

    @property
    def length(self) -> int:
        return sum(4 ** l for l in range(1, self.levels + 1)) * self.bins


@dataclass(frozen=True)
class LbpConfig:
    grid: int = 8
    radius: int = 1

    def __post_init__(self):
        if self.grid < 1 or self.radius < 1:
            raise ValueError("LBP grid and radius must be >= 1")

    @property
    def length(self) -> int:
        return self.grid * self.grid * LBP_BINS


def block_edges(n: int, parts: int) -> np.ndarray:
    """Even integer partition of ``range(n)`` into ``parts`` spans."""
    return (np.arange(parts + 1) * n) // parts


def _block_index(n: int, parts: int) -> np.ndarray:
    """Block number of every coordinate in ``range(n)``."""
    edges = block_edges(n, parts)
    return np.searchsorted(edges, np.arange(n), side="right") - 1


def gradient_field(img: np.ndarray):
    """Central-difference gradient magnitude and unsigned orientation in degrees.

    Borders use replicate clamping. Orientation lies in [0, 180).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError(f"gradient needs an image of at least 3x3, got {img.shape}")
    p = np.pad(img, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    magnitude = np.sqrt(gx * gx + gy * gy)
    orientation = np.degrees(np.arctan2(gy, gx)) % 180.0
    orientation[orientation >= 180.0] = 0.0
    return magnitude, orientation


def orientation_bin(orientation: np.ndarray, bins: int) -> np.ndarray:
    """Hard assignment to equal-width bins over [0, 180)."""
    idx = np.floor(orientation * (bins / 180.0)).astype(np.intp)
    return np.clip(idx, 0, bins - 1)


def hog_hierarchical(img: np.ndarray, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Pyramid of gradient-orientation histograms.

    Level ``l`` splits the image into a ``2**l x 2**l`` grid; every interior
    pixel votes its gradient magnitude into one orientation bin of its block.
    Output order is level-major, then block row-major, then bin.
    """
    magnitude, orientation = gradient_field(img)
    h, w = magnitude.shape
    mag = magnitude[1:-1, 1:-1].ravel()
    bins = orientation_bin(orientation[1:-1, 1:-1], cfg.bins).ravel()
    rows = np.arange(1, h - 1)
    cols = np.arange(1, w - 1)
    parts = []
    for level in range(1, cfg.levels + 1):
        g = 2 ** level
        by = _block_index(h, g)[rows]
        bx = _block_index(w, g)[cols]
        block = (by[:, None] * g + bx[None, :]).ravel()
        # bincount accumulates in input (row-major) order, like a plain loop
        parts.append(np.bincount(block * cfg.bins + bins, weights=mag,
                                 minlength=g * g * cfg.bins))
    return np.concatenate(parts)


# (row, col) neighbour offsets in units of the radius, most significant bit first
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def transitions(code: int) -> int:
    """Number of circular 0/1 changes in an 8-bit pattern."""
    rotated = ((code << 1) | (code >> 7)) & 0xFF
    return bin(code ^ rotated).count("1")


def is_uniform(code: int) -> bool:
    return transitions(code) <= 2


UNIFORM_CODES = tuple(c for c in range(256) if is_uniform(c))
LBP_BINS = len(UNIFORM_CODES) + 1

# maps a code to its histogram bin; non-uniform codes share the last bin
LBP_BIN_TABLE = np.full(256, len(UNIFORM_CODES), dtype=np.intp)
LBP_BIN_TABLE[list(UNIFORM_CODES)] = np.arange(len(UNIFORM_CODES))


def lbp_code(img: np.ndarray, x: int, y: int, radius: int = 1) -> int:
    h, w = img.shape
    if not (radius <= x < w - radius and radius <= y < h - radius):
        raise ValueError(f"pixel ({x}, {y}) is within {radius} of the border")
    center = img[y, x]
    code = 0
    for dr, dc in LBP_OFFSETS:
        code = (code << 1) | int(img[y + dr * radius, x + dc * radius] >= center)
    return code


def lbp_codes(img: np.ndarray, radius: int = 1) -> np.ndarray:
    """Codes of all pixels at least ``radius`` from the border."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    r = radius
    center = img[r:h - r, r:w - r]
    code = np.zeros(center.shape, dtype=np.intp)
    for dr, dc in LBP_OFFSETS:
        y0, x0 = r + dr * r, r + dc * r
        neighbour = img[y0:y0 + h - 2 * r, x0:x0 + w - 2 * r]
        code = (code << 1) | (neighbour >= center)
    return code


def lbp_hierarchical(img: np.ndarray, cfg: LbpConfig = LbpConfig()) -> np.ndarray:
    """Per-block 59-bin uniform LBP histograms, blocks concatenated row-major."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    r = cfg.radius
    if h <= 2 * r or w <= 2 * r:
        raise ValueError(f"image {img.shape} too small for LBP radius {r}")
    g = cfg.grid
    codes = LBP_BIN_TABLE[lbp_codes(img, r)]
    by = _block_index(h, g)[r:h - r]
    bx = _block_index(w, g)[r:w - r]
    block = by[:, None] * g + bx[None, :]
    counts = np.bincount((block * LBP_BINS + codes).ravel(), minlength=g * g * LBP_BINS)
    return counts.astype(np.float64)
