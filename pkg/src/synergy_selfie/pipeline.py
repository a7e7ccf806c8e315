"""Stage graph, content-addressed artifact store and the end-to-end runs.

Every stage writes into ``<store>/<stage>/<key>/`` where ``key`` hashes the
config values the stage depends on plus the keys of its upstream stages
(and, for the first stages, the manifest and image bytes). A directory is
complete once its ``provenance.json`` exists; re-running with an unchanged
key is a cache hit.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from . import serialization as ser
from .classifier import EvalReport, evaluate, svm_train
from .config import PipelineConfig, stable_hash
from .convnet import forward, init_params, sgd_train
from .dataset import Manifest, load_manifest, split_dataset, split_indices
from .descriptor import build_descriptor
from .errors import ConfigError, MissingArtifactError
from .handcraft import hog_hierarchical, lbp_hierarchical
from .imaging import apply_masks, encode_pgm, load_gray
from .keypoints import detect_keypoints
from .serialization import Tag
from .subspace import (cca_fit, cca_project, pca_fit, pca_project, standardizer_apply,
                       standardizer_fit, synergy)

log = logging.getLogger(__name__)

STAGES = ("split", "features", "cca", "train", "descriptors", "svm", "eval", "baseline")

DEPENDS = {
    "split": (),
    "features": (),
    "cca": ("features", "split"),
    "train": ("cca", "split"),
    "descriptors": ("train",),
    "svm": ("descriptors", "split"),
    "eval": ("svm", "descriptors", "split"),
    "baseline": ("cca", "split"),
}

# CLI command that produces each stage, used in error messages
COMMAND = {"cca": "fit-cca", "train": "train-net", "svm": "train-svm"}

FEATURE_STD_FLOOR = 1e-8


def _config_for(cfg: PipelineConfig, stage: str) -> dict:
    if stage == "split":
        return {"split_seed": cfg.resolved_split_seed}
    if stage == "features":
        return cfg.subset(["image", "hog", "lbp"])
    if stage == "cca":
        return cfg.subset(["pca", "cca"])
    if stage == "train":
        d = cfg.subset(["image", "net", "train"])
        d.update(net_init_seed=cfg.resolved_init_seed, train_seed=cfg.resolved_train_seed,
                 net_spec=cfg.net_spec().describe())
        return d
    if stage == "descriptors":
        return cfg.subset(["image", "dog"])
    if stage in ("svm", "baseline"):
        d = cfg.subset(["svm"])
        d["svm_seed"] = cfg.resolved_svm_seed
        return d
    return {}


class ArtifactStore:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, stage: str, key: str) -> Path:
        return self.root / stage / key[:24]

    def complete(self, stage: str, key: str) -> bool:
        return (self.path(stage, key) / "provenance.json").exists()

    def provenance(self, stage: str, key: str) -> dict:
        return json.loads((self.path(stage, key) / "provenance.json").read_text())

    def commit(self, stage: str, key: str, build) -> Path:
        """Run ``build(tmp_dir) -> provenance`` and move the result into place."""
        final = self.path(stage, key)
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{stage}-", dir=final.parent))
        try:
            t0 = time.perf_counter()
            prov = build(tmp)
            prov["wall_time_s"] = round(time.perf_counter() - t0, 3)
            (tmp / "provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True) + "\n")
            if final.exists():
                shutil.rmtree(final)
            os.replace(tmp, final)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        return final


# -- per-image work (module level so a process pool can pickle it)

def _features_one(path, size, hog_cfg, lbp_cfg):
    gray = load_gray(path, size)
    return hog_hierarchical(gray, hog_cfg), lbp_hierarchical(gray, lbp_cfg)


def _descriptor_one(item, spec, params, size, dog_cfg):
    path, rects = item
    gray = load_gray(path, size)
    if rects is not None:
        gray = apply_masks(gray, rects)
    kps = detect_keypoints(gray, dog_cfg)
    desc = build_descriptor(spec, params, gray, dog_cfg, keypoints=kps)
    return desc.data, desc.layer_offsets, len(kps), kps[0].fallback


@dataclass
class AblationResult:
    normal: EvalReport
    masked: EvalReport
    drop: float  # accuracy points (percent)
    skipped: list

    def summary(self) -> str:
        lines = [
            "# ablation",
            f"evaluated: {self.normal.total}",
            f"accuracy_normal: {self.normal.accuracy:.6f}",
            f"accuracy_masked: {self.masked.accuracy:.6f}",
            f"average_precision_normal: {self.normal.average_precision:.6f}",
            f"average_precision_masked: {self.masked.average_precision:.6f}",
            f"accuracy_drop_points: {self.drop:.4f}",
            f"skipped_without_rects: {len(self.skipped)}",
        ]
        lines += [f"  skipped: {s}" for s in self.skipped]
        return "\n".join(lines) + "\n"


class Pipeline:
    """All stages for one (config, manifest, store) triple."""

    def __init__(self, config: PipelineConfig, store, manifest):
        self.config = config.validate()
        self.store = store if isinstance(store, ArtifactStore) else ArtifactStore(store)
        self.manifest = manifest if isinstance(manifest, Manifest) else load_manifest(manifest)
        missing = [r.path for r in self.manifest.records if not self.manifest.resolve(r).exists()]
        if missing:
            raise ConfigError(f"manifest references missing images: {missing[:3]}")
        self.inputs_hash = self.manifest.content_hash()
        self._keys = {}
        self.hits, self.computed = [], []

    # -- keys and bookkeeping

    def key(self, stage: str) -> str:
        if stage not in self._keys:
            payload = {
                "stage": stage,
                "config": _config_for(self.config, stage),
                "upstream": {d: self.key(d) for d in DEPENDS[stage]},
            }
            if stage in ("split", "features"):
                payload["inputs"] = self.inputs_hash
            self._keys[stage] = stable_hash(payload)
        return self._keys[stage]

    def dir(self, stage: str) -> Path:
        return self.store.path(stage, self.key(stage))

    def is_complete(self, stage: str) -> bool:
        return self.store.complete(stage, self.key(stage))

    def run(self, stage: str) -> Path:
        """Compute ``stage`` unless cached; upstream stages must already exist."""
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        key = self.key(stage)
        if self.store.complete(stage, key):
            log.info("%s: cache hit (%s)", stage, key[:12])
            self.hits.append(stage)
            return self.store.path(stage, key)
        for dep in DEPENDS[stage]:
            if not self.is_complete(dep):
                raise MissingArtifactError(COMMAND.get(stage, stage), COMMAND.get(dep, dep))
        log.info("%s: computing (%s)", stage, key[:12])
        builder = getattr(self, f"_build_{stage}")

        def build(tmp):
            prov = builder(tmp) or {}
            prov.update(stage=stage, key=key, config=_config_for(self.config, stage),
                        upstream={d: self.key(d) for d in DEPENDS[stage]})
            if stage in ("split", "features"):
                prov["inputs_hash"] = self.inputs_hash
            return prov

        path = self.store.commit(stage, key, build)
        self.computed.append(stage)
        return path

    def run_all(self) -> EvalReport:
        for stage in STAGES:
            self.run(stage)
        return self.report("eval")

    # -- helpers

    def _map(self, fn, items):
        if self.config.workers > 1 and len(items) > 1:
            with ProcessPoolExecutor(self.config.workers) as pool:
                return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * self.config.workers))))
        return [fn(it) for it in items]

    def _paths(self, indices=None):
        recs = self.manifest.records
        idx = range(len(recs)) if indices is None else indices
        return [str(self.manifest.resolve(recs[i])) for i in idx]

    def tags(self) -> list:
        lines = (self.dir("split") / "split.tsv").read_text().splitlines()
        return [line.split("\t")[1] for line in lines]

    def _load(self, stage, name, tag):
        return ser.load(self.dir(stage) / name, tag)[1]

    def images(self, indices, dtype=np.float64) -> np.ndarray:
        size = self.config.image_size
        out = np.empty((len(indices), 1, size, size), dtype=dtype)
        for j, p in enumerate(self._paths(indices)):
            out[j, 0] = load_gray(p, size)
        return out

    def synergy_targets(self) -> np.ndarray:
        return self._load("cca", "synergy.syng", Tag.SYNERGY)["S"]

    def network(self):
        spec = self.config.net_spec()
        params = ser.net_from(self._load("train", "net.syng", Tag.NET), len(spec.layers))
        return spec, params

    def descriptors(self) -> np.ndarray:
        return self._load("descriptors", "descriptors.syng", Tag.DESCRIPTORS)["T"]

    def svm(self):
        t = self._load("svm", "svm.syng", Tag.SVM)
        return ser.svm_from(t), t["feature_mean"], t["feature_std"]

    def report(self, stage: str) -> EvalReport:
        return _read_report(self.dir(stage))

    # -- stage builders

    def _build_split(self, out):
        tags = split_dataset(self.manifest, self.config.resolved_split_seed)
        (out / "split.tsv").write_text(
            "".join(f"{r.path}\t{t}\n" for r, t in zip(self.manifest.records, tags)))
        counts = {f"{lab}/{t}": sum(1 for r, tt in zip(self.manifest.records, tags)
                                    if r.label == lab and tt == t)
                  for lab in ("selfie", "non_selfie") for t in ("train", "val", "test")}
        return {"counts": counts}

    def _build_features(self, out):
        cfg = self.config
        fn = partial(_features_one, size=cfg.image_size, hog_cfg=cfg.hog(), lbp_cfg=cfg.lbp())
        results = self._map(fn, self._paths())
        hog = np.stack([r[0] for r in results])
        lbp = np.stack([r[1] for r in results])
        ser.save(out / "features.syng", Tag.FEATURES, {"hog": hog, "lbp": lbp})
        return {"n": len(results), "hog_dim": hog.shape[1], "lbp_dim": lbp.shape[1]}

    def _build_cca(self, out):
        cfg = self.config
        feats = self._load("features", "features.syng", Tag.FEATURES)
        train = split_indices(self.tags(), "train")
        X, Y = feats["hog"], feats["lbp"]
        prov = {"fit_indices": train.tolist(), "label_indices": []}
        if cfg.pca_enabled:
            px = pca_fit(X[train], min(cfg.pca_dim, len(train) - 1, X.shape[1]))
            py = pca_fit(Y[train], min(cfg.pca_dim, len(train) - 1, Y.shape[1]))
            ser.save(out / "pca_hog.syng", Tag.PCA, ser.pca_tensors(px))
            ser.save(out / "pca_lbp.syng", Tag.PCA, ser.pca_tensors(py))
            X, Y = pca_project(px, X), pca_project(py, Y)
        if cfg.cca_k > min(X.shape[1], Y.shape[1]):
            raise ConfigError(f"cca.k={cfg.cca_k} exceeds reduced view dims {X.shape[1]}, {Y.shape[1]}")
        model = cca_fit(X[train], Y[train], cfg.cca_k, cfg.cca_ridge)
        U, V = cca_project(model, X, Y)
        raw = synergy(U, V)
        std = standardizer_fit(raw[train])
        S = standardizer_apply(std, raw)
        ser.save(out / "cca.syng", Tag.CCA, ser.cca_tensors(model))
        ser.save(out / "standardizer.syng", Tag.STANDARDIZER, ser.standardizer_tensors(std))
        ser.save(out / "synergy.syng", Tag.SYNERGY, {"S": S, "S_raw": raw})
        (out / "correlations.csv").write_text(
            "mode,correlation\n" + "".join(f"{i},{float(c)!r}\n" for i, c in enumerate(model.correlations)))
        return prov

    def _build_train(self, out):
        cfg = self.config
        spec = cfg.net_spec()
        tags = self.tags()
        train, val = split_indices(tags, "train"), split_indices(tags, "val")
        S = self.synergy_targets()
        sched = cfg.schedule()
        dtype = np.dtype(sched.dtype)
        params = init_params(spec, cfg.resolved_init_seed)
        progress_every = max(1, sched.total_iters // 20)

        def progress(it, loss):
            if it % progress_every == 0:
                log.info("train: iteration %d/%d loss %.5f", it, sched.total_iters, loss)

        params, hist = sgd_train(spec, params, self.images(train, dtype), S[train], sched,
                                 val=(self.images(val, dtype), S[val]), head=cfg.net_head,
                                 progress=progress)
        ser.save(out / "net.syng", Tag.NET, ser.net_tensors(params))
        (out / "net.spec").write_text(
            f"input {' '.join(map(str, spec.input_shape))}\nlayers {spec.describe()}\n")
        (out / "loss_history.csv").write_text(hist.to_csv())
        final_val = hist.val[-1][1] if hist.val else None
        return {"fit_indices": train.tolist(), "monitor_indices": val.tolist(),
                "label_indices": [], "final_train_loss": hist.train[-1][2] if hist.train else None,
                "final_val_loss": final_val}

    def _descriptor_rows(self, items):
        spec, params = self.network()
        cfg = self.config
        fn = partial(_descriptor_one, spec=spec, params=params, size=cfg.image_size, dog_cfg=cfg.dog())
        return self._map(fn, items)

    def _build_descriptors(self, out):
        rows = self._descriptor_rows([(p, None) for p in self._paths()])
        T = np.stack([r[0] for r in rows])
        ser.save(out / "descriptors.syng", Tag.DESCRIPTORS, {
            "T": T,
            "layer_offsets": np.array(rows[0][1], dtype=np.float64),
            "keypoint_count": np.array([r[2] for r in rows], dtype=np.float64),
            "fallback": np.array([r[3] for r in rows], dtype=np.float64),
        })
        (out / "index.tsv").write_text(
            "".join(f"{i}\t{r.path}\n" for i, r in enumerate(self.manifest.records)))
        return {"n": len(rows), "dim": T.shape[1],
                "fallback_images": int(sum(r[3] for r in rows))}

    def _fit_svm(self, X, train, out):
        cfg = self.config
        y = self.manifest.labels
        if cfg.svm_standardize:
            mean = X[train].mean(axis=0)
            std = np.maximum(X[train].std(axis=0), FEATURE_STD_FLOOR)
        else:
            mean, std = np.zeros(X.shape[1]), np.ones(X.shape[1])
        model = svm_train((X[train] - mean) / std, y[train], C=cfg.svm_c, epochs=cfg.svm_epochs,
                          seed=cfg.resolved_svm_seed, solver=cfg.svm_solver)
        tensors = ser.svm_tensors(model)
        tensors.update(feature_mean=mean, feature_std=std)
        ser.save(out / "svm.syng", Tag.SVM, tensors)
        return model, mean, std

    def _build_svm(self, out):
        train = split_indices(self.tags(), "train")
        self._fit_svm(self.descriptors(), train, out)
        return {"fit_indices": train.tolist(), "label_indices": train.tolist()}

    def _evaluate(self, model, mean, std, X, title):
        tags = self.tags()
        test, val = split_indices(tags, "test"), split_indices(tags, "val")
        y, ids = self.manifest.labels, self.manifest.ids
        Xs = (X - mean) / std
        return evaluate(model, Xs[test], y[test], ids=[ids[i] for i in test],
                        val=(Xs[val], y[val]), title=title), test, val

    def _build_eval(self, out):
        model, mean, std = self.svm()
        report, test, val = self._evaluate(model, mean, std, self.descriptors(), "synergy-constrained CNN + SVM")
        _write_report(out, report)
        return {"label_indices": test.tolist() + val.tolist(), "fit_indices": []}

    def _build_baseline(self, out):
        train = split_indices(self.tags(), "train")
        S = self.synergy_targets()
        model, mean, std = self._fit_svm(S, train, out)
        report, test, val = self._evaluate(model, mean, std, S, "synergy feature + SVM (baseline)")
        _write_report(out, report)
        return {"fit_indices": train.tolist(), "label_indices": train.tolist()}

    # -- ablation and heatmaps

    def run_ablation(self, masks: Manifest) -> AblationResult:
        """Evaluate the frozen pipeline on masked test images.

        Test records absent from ``masks`` or without a rect column are
        skipped and listed.
        """
        for dep in ("svm", "descriptors", "split"):
            if not self.is_complete(dep):
                raise MissingArtifactError("ablate", COMMAND.get(dep, dep))
        key = stable_hash({"stage": "ablation", "eval": self.key("svm"),
                           "descriptors": self.key("descriptors"), "masks": masks.to_text()})
        by_path = {r.path: r for r in masks.records}
        test = split_indices(self.tags(), "test")
        keep, skipped = [], []
        for i in test:
            rec = by_path.get(self.manifest.records[i].path)
            if rec is None or not rec.has_rects:
                skipped.append(self.manifest.records[i].path)
            else:
                keep.append((i, rec.rects))
        if not keep:
            raise ValueError("no test record has mask rectangles")
        idx = np.array([i for i, _ in keep])

        def build(tmp):
            rows = self._descriptor_rows([(p, list(r)) for p, (_, r) in zip(self._paths(idx), keep)])
            ser.save(tmp / "masked_descriptors.syng", Tag.DESCRIPTORS,
                     {"T": np.stack([r[0] for r in rows]), "rows": idx.astype(np.float64)})
            (tmp / "masks.tsv").write_text(masks.to_text())
            return {"stage": "ablation", "key": key, "evaluated_indices": idx.tolist(),
                    "skipped": skipped}

        if not self.store.complete("ablation", key):
            self.store.commit("ablation", key, build)
        adir = self.store.path("ablation", key)
        masked_T = ser.load(adir / "masked_descriptors.syng", Tag.DESCRIPTORS)[1]["T"]
        model, mean, std = self.svm()
        y, ids = self.manifest.labels, self.manifest.ids
        sub_ids = [ids[i] for i in idx]
        normal = evaluate(model, (self.descriptors()[idx] - mean) / std, y[idx], ids=sub_ids,
                          title="ablation: original test images")
        masked = evaluate(model, (masked_T - mean) / std, y[idx], ids=sub_ids,
                          title="ablation: masked test images")
        result = AblationResult(normal, masked, 100.0 * (normal.accuracy - masked.accuracy), skipped)
        (adir / "ablation.txt").write_text(result.summary() + "\n" + normal.summary()
                                           + "\n" + masked.summary())
        return result

    def export_heatmaps(self, image_ids, layer: int, filter_indices, out_dir) -> list:
        """Write one PGM per (image, filter) of conv layer ``layer`` (1-based)."""
        if not self.is_complete("train"):
            raise MissingArtifactError("heatmaps", "train-net")
        spec, params = self.network()
        n_conv = len(spec.conv_indices)
        if not 1 <= layer <= n_conv:
            raise ValueError(f"layer must be in 1..{n_conv}, got {layer}")
        n_filters = spec.layers[spec.conv_indices[layer - 1]].filters
        for f in filter_indices:
            if not 0 <= f < n_filters:
                raise ValueError(f"filter index {f} out of range 0..{n_filters - 1}")
        lookup = {}
        for i, r in enumerate(self.manifest.records):
            lookup[r.path] = i
            lookup.setdefault(Path(r.path).stem, i)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        size = self.config.image_size
        written = []
        for image_id in image_ids:
            if image_id not in lookup:
                raise ValueError(f"unknown image id {image_id!r}")
            i = lookup[image_id]
            gray = load_gray(self._paths([i])[0], size)
            _, maps = forward(spec, params, gray[None])
            for f in filter_indices:
                heat = heatmap_image(maps[layer - 1][f], size, size)
                name = f"{Path(self.manifest.records[i].path).stem}_conv{layer}_f{f}.pgm"
                (out_dir / name).write_bytes(encode_pgm(heat / 255.0))
                written.append(out_dir / name)
        return written


def heatmap_image(act: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Min-max scale to 0..255 (all zeros if constant), nearest-neighbour upscale."""
    act = np.asarray(act, dtype=np.float64)
    lo, hi = act.min(), act.max()
    scaled = np.zeros_like(act) if hi <= lo else np.rint((act - lo) / (hi - lo) * 255.0)
    h, w = act.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return scaled[rows][:, cols]


def _write_report(out: Path, report: EvalReport):
    (out / "report.txt").write_text(report.summary())
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(json.dumps({
        "title": report.title, "accuracy": report.accuracy,
        "average_precision": report.average_precision,
        "tp": report.tp, "fp": report.fp, "tn": report.tn, "fn": report.fn,
        "val_threshold": report.val_threshold,
        "accuracy_at_val_threshold": report.accuracy_at_val_threshold,
    }, indent=1, sort_keys=True) + "\n")


def _read_report(path: Path) -> EvalReport:
    d = json.loads((Path(path) / "report.json").read_text())
    decisions = []
    for line in (Path(path) / "report.csv").read_text().splitlines()[1:]:
        i, lab, dec, pred = line.rsplit(",", 3)
        decisions.append((i, int(lab), float(dec), int(pred)))
    return EvalReport(d["accuracy"], d["average_precision"], d["tp"], d["fp"], d["tn"], d["fn"],
                      decisions, d["val_threshold"], d["accuracy_at_val_threshold"], d["title"])
