"""Seeded synthetic stand-in for a selfie / non-selfie dataset.

Each image holds a bright disk ("head") and a bar ("arm") anchored below
it. For selfies the bar points at the head (angle = head direction +
N(0, 5 deg)); for non-selfies the bar direction is uniform and independent.
Low-contrast distractor blobs and pixel noise are added on top.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Manifest, Record
from .imaging import MaskRect, encode_pgm

BACKGROUND = 0.15
HEAD_LEVEL = 0.85
ARM_LEVEL = 0.75
NOISE_SIGMA = 0.05
ANGLE_NOISE_DEG = 5.0


@dataclass(frozen=True)
class SampleInfo:
    label: str
    head_angle: float  # direction anchor -> head, degrees, y axis pointing up
    arm_angle: float   # direction anchor -> arm tip, degrees in [0, 360)
    anchor: tuple
    head_center: tuple
    arm_tip: tuple
    rects: tuple


def _soft(coverage):
    return np.clip(coverage, 0.0, 1.0)


def _paint(img, alpha, level):
    img *= 1.0 - alpha
    img += alpha * level


def _segment_distance(X, Y, p0, p1):
    vx, vy = p1[0] - p0[0], p1[1] - p0[1]
    t = ((X - p0[0]) * vx + (Y - p0[1]) * vy) / (vx * vx + vy * vy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(X - (p0[0] + t * vx), Y - (p0[1] + t * vy))


def _clip_rect(x0, y0, x1, y1, size):
    x0, y0 = max(0, int(math.floor(x0))), max(0, int(math.floor(y0)))
    x1, y1 = min(size, int(math.ceil(x1))), min(size, int(math.ceil(y1)))
    return MaskRect(x0, y0, max(0, x1 - x0), max(0, y1 - y0))


def render_sample(rng: np.random.Generator, label: str, size: int = 227):
    """Draw one image; returns ``(gray image, SampleInfo)``."""
    Y, X = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), BACKGROUND)
    radius = size / 10
    arm_len = 0.2 * size
    half_width = max(1.5, size / 56)
    reach = radius + arm_len + 0.03 * size

    for _ in range(2):
        cx, cy = rng.uniform(0, size, 2)
        a, b = rng.uniform(0.03, 0.09, 2) * size
        rot = rng.uniform(0, math.pi)
        dx, dy = X - cx, Y - cy
        u = dx * math.cos(rot) + dy * math.sin(rot)
        v = -dx * math.sin(rot) + dy * math.cos(rot)
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        _paint(img, inside.astype(np.float64), BACKGROUND + rng.uniform(0.06, 0.12))

    ax = rng.uniform(0.35, 0.65) * size
    ay = rng.uniform(0.58, 0.72) * size
    head_angle = rng.uniform(60.0, 120.0)
    if label == "selfie":
        arm_angle = (head_angle + rng.normal(0.0, ANGLE_NOISE_DEG)) % 360.0
    else:
        arm_angle = rng.uniform(0.0, 360.0)
    hx = ax + reach * math.cos(math.radians(head_angle))
    hy = ay - reach * math.sin(math.radians(head_angle))
    tx = ax + arm_len * math.cos(math.radians(arm_angle))
    ty = ay - arm_len * math.sin(math.radians(arm_angle))

    _paint(img, _soft(half_width + 0.5 - _segment_distance(X, Y, (ax, ay), (tx, ty))), ARM_LEVEL)
    _paint(img, _soft(radius + 0.5 - np.hypot(X - hx, Y - hy)), HEAD_LEVEL)
    img += rng.normal(0.0, NOISE_SIGMA, img.shape)
    np.clip(img, 0.0, 1.0, out=img)

    pad = 2.0
    rects = (
        _clip_rect(hx - radius - pad, hy - radius - pad, hx + radius + pad, hy + radius + pad, size),
        _clip_rect(min(ax, tx) - half_width - pad, min(ay, ty) - half_width - pad,
                   max(ax, tx) + half_width + pad, max(ay, ty) + half_width + pad, size),
    )
    info = SampleInfo(label, head_angle, arm_angle, (ax, ay), (hx, hy), (tx, ty), rects)
    return img, info


def angle_gap(info: SampleInfo) -> float:
    """Absolute wrapped difference between head and arm directions, degrees."""
    d = (info.arm_angle - info.head_angle + 180.0) % 360.0 - 180.0
    return abs(d)


def generate_synthetic_dataset(n_per_class: int, seed: int, out_dir, size: int = 227):
    """Write ``2 * n_per_class`` PGM images plus ``manifest.tsv``.

    Also writes ``params.tsv`` with each sample's generating angles. Returns
    ``(Manifest, list of SampleInfo)``.
    """
    if n_per_class < 10:
        raise ValueError("n_per_class must be at least 10")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records, infos = [], []
    params = ["path\tlabel\thead_angle\tarm_angle"]
    for i in range(2 * n_per_class):
        label = "selfie" if i % 2 == 0 else "non_selfie"
        rng = np.random.default_rng([seed, i])
        img, info = render_sample(rng, label, size)
        rel = f"images/{i:05d}_{label}.pgm"
        (out / rel).write_bytes(encode_pgm(img))
        records.append(Record(rel, label, info.rects, True))
        infos.append(info)
        params.append(f"{rel}\t{label}\t{info.head_angle!r}\t{info.arm_angle!r}")
    manifest = Manifest(records, out)
    manifest.write(out / "manifest.tsv")
    (out / "params.tsv").write_text("\n".join(params) + "\n")
    return manifest, infos
