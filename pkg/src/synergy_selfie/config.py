"""Pipeline configuration: a flat ``section.key = value`` text file.

Every dataclass field ``section_key`` is addressed in the file as
``section.key``; fields without an underscore are top-level keys.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .convnet import HEADS, NetSpec, TrainSchedule, parse_layers, toy_alex
from .errors import ConfigError
from .handcraft import HogConfig, LbpConfig
from .keypoints import DogConfig


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    image_size: int = 227
    hog_levels: int = 4
    hog_bins: int = 9
    lbp_grid: int = 8
    lbp_radius: int = 1
    pca_enabled: bool = True
    pca_dim: int = 128
    cca_k: int = 32
    cca_ridge: float = 1e-3
    net_layers: str = "toy-alex"
    net_head: str = "paper"
    net_init_seed: Optional[int] = None
    train_lr0: float = 1e-5
    train_halve_every: int = 2000
    train_batch: int = 16
    train_total_iters: int = 8000
    train_momentum: float = 0.0
    train_dtype: str = "float64"
    train_seed: Optional[int] = None
    dog_scales_per_octave: int = 3
    dog_base_sigma: float = 1.6
    dog_contrast_thresh: float = 0.03
    dog_edge_ratio: float = 10.0
    dog_max_octaves: int = 0
    svm_c: float = 1.0
    svm_solver: str = "smo"
    svm_epochs: int = 200
    svm_standardize: bool = True
    svm_seed: Optional[int] = None
    split_seed: Optional[int] = None

    # -- derived seeds
    def _seed(self, explicit, offset):
        return explicit if explicit is not None else self.seed + offset

    @property
    def resolved_split_seed(self) -> int:
        return self._seed(self.split_seed, 0)

    @property
    def resolved_init_seed(self) -> int:
        return self._seed(self.net_init_seed, 1)

    @property
    def resolved_train_seed(self) -> int:
        return self._seed(self.train_seed, 2)

    @property
    def resolved_svm_seed(self) -> int:
        return self._seed(self.svm_seed, 3)

    # -- component configs
    def hog(self) -> HogConfig:
        return HogConfig(self.hog_levels, self.hog_bins)

    def lbp(self) -> LbpConfig:
        return LbpConfig(self.lbp_grid, self.lbp_radius)

    def dog(self) -> DogConfig:
        return DogConfig(self.dog_scales_per_octave, self.dog_base_sigma, self.dog_contrast_thresh,
                         self.dog_edge_ratio, self.dog_max_octaves or None)

    def net_spec(self) -> NetSpec:
        if self.net_layers.strip() == "toy-alex":
            return toy_alex(self.cca_k, self.image_size)
        return NetSpec((1, self.image_size, self.image_size), parse_layers(self.net_layers))

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(lr0=self.train_lr0, halve_every=self.train_halve_every,
                             batch=self.train_batch, total_iters=self.train_total_iters,
                             momentum=self.train_momentum, seed=self.resolved_train_seed,
                             dtype=self.train_dtype)

    def validate(self) -> "PipelineConfig":
        """Cross-module consistency checks; raises ConfigError."""
        try:
            self.hog()
            self.lbp()
            self.dog()
            self.schedule()
            spec = self.net_spec()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.image_size < 16:
            raise ConfigError("image.size must be at least 16")
        if spec.output_dim != self.cca_k:
            raise ConfigError(
                f"network output dim {spec.output_dim} must equal cca.k={self.cca_k}"
            )
        if self.net_head not in HEADS:
            raise ConfigError(f"net.head must be one of {HEADS}")
        if self.cca_k < 1 or self.cca_ridge < 0:
            raise ConfigError("cca.k must be >= 1 and cca.ridge >= 0")
        if self.pca_enabled and self.pca_dim < self.cca_k:
            raise ConfigError("pca.dim must be >= cca.k")
        if self.svm_c <= 0:
            raise ConfigError("svm.c must be positive")
        if self.svm_solver not in ("smo", "pegasos"):
            raise ConfigError("svm.solver must be smo or pegasos")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def subset(self, prefixes) -> dict:
        """Values of every field under the given sections (for cache keys)."""
        out = {}
        for f in fields(self):
            if any(f.name == p or f.name.startswith(p + "_") for p in prefixes):
                out[f.name] = getattr(self, f.name)
        return out

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{field_key(f.name)} = {v}")
        return "\n".join(lines) + "\n"


def field_key(name: str) -> str:
    return name.replace("_", ".", 1) if "_" in name else name


_KEYS = {field_key(f.name): f for f in fields(PipelineConfig)}
_HINTS = typing.get_type_hints(PipelineConfig)


def _convert(key, raw, hint):
    base = typing.get_args(hint)[0] if typing.get_origin(hint) is typing.Union else hint
    try:
        if base is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if base is int:
            return int(raw)
        if base is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        f = _KEYS[key]
        values[f.name] = _convert(key, raw, _HINTS[f.name])
    return dataclasses.replace(base or PipelineConfig(), **values)


def load_config(path=None, seed=None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_config(text, cfg)
    if seed is not None:
        cfg = cfg.replace(seed=int(seed))
    return cfg.validate()


def stable_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()
