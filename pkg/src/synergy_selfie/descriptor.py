"""Keypoint-pooled descriptors from a trained network's convolutional maps."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from .convnet import NetParams, NetSpec, forward
from .keypoints import DogConfig, detect_keypoints


@dataclass(frozen=True)
class LayerRatio:
    layer_index: int
    ratio: Fraction


@dataclass(frozen=True)
class SelfieDescriptor:
    data: np.ndarray
    layer_offsets: tuple

    def block(self, p: int) -> np.ndarray:
        end = self.layer_offsets[p + 1] if p + 1 < len(self.layer_offsets) else len(self.data)
        return self.data[self.layer_offsets[p]:end]


def normalize_maps(maps):
    """Scale each layer's maps by its largest absolute activation.

    All-zero layers are passed through untouched.
    """
    out = []
    for C in maps:
        C = np.asarray(C, dtype=np.float64)
        peak = np.max(np.abs(C)) if C.size else 0.0
        out.append(C / peak if peak > 0 else C.copy())
    return out


def map_size_ratios(spec: NetSpec) -> list:
    """Cumulative ``prod(1 / stride)`` over conv and pool layers, per conv layer."""
    ratio = Fraction(1)
    out = []
    for i, layer in enumerate(spec.layers):
        if layer.kind in ("conv", "maxpool"):
            ratio /= layer.stride
        if layer.kind == "conv":
            out.append(LayerRatio(i, ratio))
    return out


def round_half_away(value: Fraction) -> int:
    if value >= 0:
        return math.floor(value + Fraction(1, 2))
    return -math.floor(-value + Fraction(1, 2))


_NEIGHBOURS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))


def pool_at_keypoints(C: np.ndarray, keypoints, ratio: Fraction) -> np.ndarray:
    """Average over keypoints of the per-filter max in the 4-connected cross.

    ``C`` is one normalised ``(N_p, H_p, W_p)`` map; keypoints carry input
    image coordinates, which are scaled by ``ratio``, rounded half away from
    zero and clamped into the map.
    """
    if not keypoints:
        raise ValueError("pooling needs at least one keypoint")
    C = np.asarray(C, dtype=np.float64)
    _, h, w = C.shape
    total = np.zeros(C.shape[0])
    for kp in keypoints:
        cx = min(max(round_half_away(ratio * kp.x), 0), w - 1)
        cy = min(max(round_half_away(ratio * kp.y), 0), h - 1)
        cells = [(cy + dy, cx + dx) for dy, dx in _NEIGHBOURS
                 if 0 <= cy + dy < h and 0 <= cx + dx < w]
        ys, xs = zip(*cells)
        total += C[:, list(ys), list(xs)].max(axis=1)
    return total / len(keypoints)


def descriptor_from_maps(spec: NetSpec, maps, keypoints) -> SelfieDescriptor:
    ratios = map_size_ratios(spec)
    blocks, offsets, pos = [], [], 0
    for C, r in zip(normalize_maps(maps), ratios):
        offsets.append(pos)
        t = pool_at_keypoints(C, keypoints, r.ratio)
        blocks.append(t)
        pos += len(t)
    return SelfieDescriptor(np.concatenate(blocks), tuple(offsets))


def build_descriptor(spec: NetSpec, params: NetParams, img: np.ndarray,
                     cfg: DogConfig = DogConfig(), keypoints=None) -> SelfieDescriptor:
    """Descriptor of one gray image: eval-mode forward pass, then pooling of
    every conv layer's normalised map at the image's keypoints."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != tuple(spec.input_shape[1:]):
        raise ValueError(f"image {img.shape} does not match network input {spec.input_shape}")
    if keypoints is None:
        keypoints = detect_keypoints(img, cfg)
    _, maps = forward(spec, params, img[None])
    return descriptor_from_maps(spec, maps, keypoints)
