"""Scale-space (difference-of-Gaussians) keypoint locations.

Only the detector stage is implemented: candidates are 3-D extrema of the
DoG stack that survive contrast and edge tests. No orientation, subpixel
refinement or descriptors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

MIN_SIZE = 16


@dataclass(frozen=True)
class DogConfig:
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_thresh: float = 0.03
    edge_ratio: float = 10.0
    max_octaves: Optional[int] = None  # None: until the octave is smaller than 16 px

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if self.base_sigma <= 0 or self.contrast_thresh <= 0 or self.edge_ratio <= 0:
            raise ValueError("DoG sigma and thresholds must be positive")


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    octave: int
    scale_index: int
    response: float
    fallback: bool = False


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2 * sigma * sigma))
    return k / k.sum()


def _blur_axis(img, kernel, axis):
    r = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    p = np.pad(img, pad, mode="edge")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for i, wt in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + n)
        out += wt * p[tuple(sl)]
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, radius ceil(3 sigma), replicated borders."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(sigma)
    img = np.asarray(img, dtype=np.float64)
    return _blur_axis(_blur_axis(img, k, 1), k, 0)


def _extrema(dog):
    """Mask of strict maxima/minima over the 26-neighbourhood (interior only)."""
    c = dog[1:-1, 1:-1, 1:-1]
    s, h, w = dog.shape
    is_max = np.ones(c.shape, dtype=bool)
    is_min = np.ones(c.shape, dtype=bool)
    for ds in (0, 1, 2):
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                if ds == dy == dx == 1:
                    continue
                nb = dog[ds:ds + s - 2, dy:dy + h - 2, dx:dx + w - 2]
                is_max &= c > nb
                is_min &= c < nb
    return is_max | is_min


def fallback_grid(width: int, height: int, n: int = 4) -> list:
    """Uniform ``n x n`` grid used when detection finds nothing."""
    pts = []
    for j in range(n):
        for i in range(n):
            x = int((i + 0.5) * width / n)
            y = int((j + 0.5) * height / n)
            pts.append(Keypoint(x, y, octave=-1, scale_index=-1, response=0.0, fallback=True))
    return pts


def detect_keypoints(img: np.ndarray, cfg: DogConfig = DogConfig()) -> list:
    """DoG extrema mapped back to input pixel coordinates.

    If nothing survives, a flagged 4x4 grid is returned instead so that
    downstream pooling always has support.
    """
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape
    if min(height, width) < MIN_SIZE:
        raise ValueError(f"image {width}x{height} smaller than {MIN_SIZE} px")
    s = cfg.scales_per_octave
    sigmas = [cfg.base_sigma * 2.0 ** (i / s) for i in range(s + 3)]
    edge_limit = (cfg.edge_ratio + 1) ** 2 / cfg.edge_ratio
    base = gaussian_blur(img, cfg.base_sigma)
    found, seen = [], set()
    octave = 0
    while min(base.shape) >= MIN_SIZE and (cfg.max_octaves is None or octave < cfg.max_octaves):
        gauss = [base]
        for i in range(1, s + 3):
            gauss.append(gaussian_blur(gauss[-1], math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2)))
        dog = np.stack([gauss[i + 1] - gauss[i] for i in range(s + 2)])
        mask = _extrema(dog)
        for si, yi, xi in zip(*np.nonzero(mask)):
            sc, y, x = si + 1, yi + 1, xi + 1
            d = dog[sc]
            v = d[y, x]
            if abs(v) < cfg.contrast_thresh:
                continue
            dxx = d[y, x + 1] + d[y, x - 1] - 2 * v
            dyy = d[y + 1, x] + d[y - 1, x] - 2 * v
            dxy = (d[y + 1, x + 1] - d[y + 1, x - 1] - d[y - 1, x + 1] + d[y - 1, x - 1]) / 4
            det = dxx * dyy - dxy * dxy
            if det <= 0 or (dxx + dyy) ** 2 / det > edge_limit:
                continue
            px, py = int(x) << octave, int(y) << octave
            if (px, py) in seen:
                continue
            seen.add((px, py))
            found.append(Keypoint(px, py, octave, int(sc), float(v)))
        base = gauss[s][::2, ::2]
        octave += 1
    return found or fallback_grid(width, height)


def keypoints_to_csv(keypoints) -> str:
    lines = ["x,y,octave,scale_index,response,fallback"]
    for k in keypoints:
        lines.append(f"{k.x},{k.y},{k.octave},{k.scale_index},{k.response!r},{int(k.fallback)}")
    return "\n".join(lines) + "\n"
