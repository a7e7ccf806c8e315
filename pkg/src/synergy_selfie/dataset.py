"""Tab-separated dataset manifests and stratified splits.

One record per line::

    path<TAB>label[<TAB>x0,y0,w,h;x0,y0,w,h...]

``label`` is ``selfie`` or ``non_selfie``; paths are relative to the
manifest's directory. Mask rectangles are in resized-image coordinates.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .imaging import MaskRect

LABELS = ("selfie", "non_selfie")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Record:
    path: str
    label: str
    rects: tuple = ()
    has_rects: bool = False

    @property
    def y(self) -> int:
        return 1 if self.label == "selfie" else -1


@dataclass
class Manifest:
    records: list
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.records)

    def resolve(self, record: Record) -> Path:
        return self.root / record.path

    @property
    def ids(self) -> list:
        return [r.path for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.y for r in self.records])

    def to_text(self) -> str:
        lines = []
        for r in self.records:
            cols = [r.path, r.label]
            if r.has_rects:
                cols.append(";".join(m.to_text() for m in r.rects))
            lines.append("\t".join(cols))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    def content_hash(self) -> str:
        """Hash of the record list and the bytes of every referenced image."""
        h = hashlib.sha256(self.to_text().encode())
        for r in self.records:
            p = self.resolve(r)
            h.update(hashlib.sha256(p.read_bytes()).digest() if p.exists() else b"missing")
        return h.hexdigest()


def parse_manifest(text: str, root=Path(".")) -> Manifest:
    records, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.rstrip("\n").split("\t")
        if len(cols) < 2 or len(cols) > 3:
            raise ConfigError(f"manifest line {lineno}: expected 2 or 3 tab-separated fields")
        path, label = cols[0].strip(), cols[1].strip()
        if label not in LABELS:
            raise ConfigError(f"manifest line {lineno}: unknown label {label!r}")
        if path in seen:
            raise ConfigError(f"manifest line {lineno}: duplicate path {path!r}")
        seen.add(path)
        rects, has = (), len(cols) == 3
        if has and cols[2].strip():
            try:
                rects = tuple(MaskRect.from_text(t) for t in cols[2].split(";") if t.strip())
            except ValueError as exc:
                raise ConfigError(f"manifest line {lineno}: {exc}") from exc
        records.append(Record(path, label, rects, has))
    return Manifest(records, Path(root))


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, path.parent)


def with_rects(manifest: Manifest, rects_for) -> Manifest:
    """Copy of ``manifest`` whose rects are ``rects_for(record)``."""
    recs = [Record(r.path, r.label, tuple(rects_for(r)), True) for r in manifest.records]
    return Manifest(recs, manifest.root)


def corner_rects(size: int, frac: float = 0.1) -> list:
    """Four square rectangles in the image corners."""
    s = max(1, int(round(size * frac)))
    return [MaskRect(0, 0, s, s), MaskRect(size - s, 0, s, s),
            MaskRect(0, size - s, s, s), MaskRect(size - s, size - s, s, s)]


def split_counts(n: int) -> tuple:
    """60/10/30 by cumulative floors: train = floor(.6n), train+val = floor(.7n)."""
    n_train = (6 * n) // 10
    n_val = (7 * n) // 10 - n_train
    return n_train, n_val, n - n_train - n_val


def split_dataset(manifest: Manifest, seed: int) -> list:
    """Stratified shuffled split; returns one tag per record."""
    tags = [None] * len(manifest)
    rng = np.random.default_rng(seed)
    for label in LABELS:
        idx = [i for i, r in enumerate(manifest.records) if r.label == label]
        if len(idx) < 10:
            raise ValueError(f"class {label!r} has {len(idx)} records; at least 10 are needed")
        perm = [idx[j] for j in rng.permutation(len(idx))]
        n_train, n_val, _ = split_counts(len(idx))
        for pos, i in enumerate(perm):
            tags[i] = "train" if pos < n_train else "val" if pos < n_train + n_val else "test"
    return tags


def split_indices(tags, which: str) -> np.ndarray:
    return np.array([i for i, t in enumerate(tags) if t == which], dtype=np.intp)
