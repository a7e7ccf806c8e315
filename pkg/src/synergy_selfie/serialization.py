"""Versioned little-endian binary container for arrays and fitted models.

Layout::

    b"SYNG" | u16 version | u16 type tag | u16 tensor count
    per tensor: u16 name length | utf-8 name | u16 ndim | u64 dims... | f64 payload
"""
from __future__ import annotations

import enum
import io
import struct
from pathlib import Path

import numpy as np

from .classifier import SvmModel
from .convnet import NetParams
from .subspace import CcaModel, PcaModel, SynergyStandardizer

MAGIC = b"SYNG"
VERSION = 1


class ArtifactFormatError(ValueError):
    pass


class Tag(enum.IntEnum):
    FEATURES = 1
    PCA = 2
    CCA = 3
    STANDARDIZER = 4
    NET = 5
    SVM = 6
    DESCRIPTORS = 7
    SYNERGY = 8


def dumps(tag: Tag, tensors: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<HHH", VERSION, int(tag), len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<H", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(data: bytes, expect: Tag | None = None):
    """Parse a container; returns ``(tag, {name: array})``."""
    if data[:4] != MAGIC:
        raise ArtifactFormatError("not a SYNG artifact (bad magic)")
    if len(data) < 10:
        raise ArtifactFormatError("truncated header")
    version, tag, count = struct.unpack_from("<HHH", data, 4)
    if version != VERSION:
        raise ArtifactFormatError(f"unsupported artifact version {version}")
    try:
        tag = Tag(tag)
    except ValueError as exc:
        raise ArtifactFormatError(f"unknown type tag {tag}") from exc
    if expect is not None and tag != expect:
        raise ArtifactFormatError(f"expected a {expect.name} artifact, found {tag.name}")
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<H", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(data):
                raise ArtifactFormatError(f"truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise ArtifactFormatError(f"truncated artifact: {exc}") from exc
    return tag, out


def save(path, tag: Tag, tensors: dict) -> None:
    Path(path).write_bytes(dumps(tag, tensors))


def load(path, expect: Tag | None = None):
    return loads(Path(path).read_bytes(), expect)


# model helpers

def pca_tensors(m: PcaModel) -> dict:
    return {"mean": m.mean, "components": m.components, "explained_variance": m.explained_variance}


def pca_from(t: dict) -> PcaModel:
    return PcaModel(t["mean"], t["components"], t["explained_variance"])


def cca_tensors(m: CcaModel) -> dict:
    return {"x_mean": m.x_mean, "y_mean": m.y_mean, "A": m.A, "B": m.B,
            "correlations": m.correlations, "ridge": np.array(m.ridge)}


def cca_from(t: dict) -> CcaModel:
    return CcaModel(t["x_mean"], t["y_mean"], t["A"], t["B"], t["correlations"], float(t["ridge"]))


def standardizer_tensors(m: SynergyStandardizer) -> dict:
    return {"mean": m.mean, "std": m.std}


def standardizer_from(t: dict) -> SynergyStandardizer:
    return SynergyStandardizer(t["mean"], t["std"])


def svm_tensors(m: SvmModel) -> dict:
    return {"w": m.w, "b": np.array(m.b), "C": np.array(m.C)}


def svm_from(t: dict) -> SvmModel:
    return SvmModel(t["w"], float(t["b"]), float(t["C"]))


def net_tensors(p: NetParams) -> dict:
    out = {"rng_seed": np.array(float(p.rng_seed))}
    for i, name, arr in p.arrays():
        out[f"{name}{i}"] = arr
    return out


def net_from(t: dict, n_layers: int) -> NetParams:
    weights = [t.get(f"W{i}") for i in range(n_layers)]
    biases = [t.get(f"b{i}") for i in range(n_layers)]
    return NetParams(weights, biases, int(t["rng_seed"]))
