"""Extract -> train -> classify -> evaluate orchestration.

Patch store layout::

    <patches>/<split>/manifest.csv      one row per kept patch
    <patches>/<split>/sources.csv       one row per source image (incl. zero-patch ones)
    <patches>/<split>/<source>_r<R>_c<C>.png

Evaluation reads only the persisted test split; it never re-extracts.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from fpliveness import classifier as clf
from fpliveness.dataset import SPLITS, DatasetEntry, ingest_dataset
from fpliveness.image import ImageLoadError, load_image
from fpliveness.metrics import EvalReport, FingerprintResult, PatchScore, csv_header
from fpliveness.overlay import render_overlay, save_overlay
from fpliveness.patches import (
    MANIFEST_NAME,
    Label,
    Patch,
    PatchParams,
    dense_sample,
    load_patches,
    persist_patches,
    read_manifest,
)
from fpliveness.plotting import plot_history, plot_report

log = logging.getLogger(__name__)

SOURCES_NAME = "sources.csv"


class ArtifactMissingError(FileNotFoundError):
    pass


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    patch: PatchParams = field(default_factory=PatchParams)
    cnn_params: dict = field(default_factory=dict)
    train: clf.TrainConfig = field(default_factory=clf.TrainConfig)
    dataset: Optional[Path] = None
    patches: Optional[Path] = None
    model: Optional[Path] = None
    report: Optional[Path] = None
    seed: int = 0
    baseline_threshold: Optional[float] = None

    @property
    def cnn(self) -> clf.CnnConfig:
        """Classifier config; validated on use so extraction never depends on it."""
        kw = dict(self.cnn_params)
        kw.setdefault("input_side", self.patch.final_side)
        return clf.CnnConfig(**kw)

    def __post_init__(self):
        paths = [p for p in (self.dataset, self.patches, self.model, self.report) if p is not None]
        if len({Path(p).resolve() for p in paths}) != len(paths):
            raise ValueError("dataset, patch store, model and report paths must be distinct")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Build from flat keys (see README); unknown keys are rejected."""
        d = dict(d)
        groups = {
            "patch": {f.name for f in fields(PatchParams)},
            "cnn_params": {f.name for f in fields(clf.CnnConfig)},
            "train": {f.name for f in fields(clf.TrainConfig)} - {"seed"},
        }
        parts = {g: {k: d.pop(k) for k in list(d) if k in names} for g, names in groups.items()}
        top = {f.name for f in fields(cls)} - set(groups)
        unknown = set(d) - top
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        patch = PatchParams(**parts["patch"])
        seed = int(d.pop("seed", 0))
        for k in ("dataset", "patches", "model", "report"):
            if d.get(k) is not None:
                d[k] = Path(d[k])
        return cls(
            patch=patch,
            cnn_params=parts["cnn_params"],
            train=clf.TrainConfig(seed=seed, **parts["train"]),
            seed=seed,
            **d,
        )

    @classmethod
    def load(cls, path, overrides: Optional[dict] = None) -> "RunConfig":
        d = json.loads(Path(path).read_text()) if path else {}
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d)

    def check_shapes(self, model_cfg: Optional[clf.CnnConfig] = None):
        cfg = model_cfg or self.cnn
        if cfg.input_side != self.patch.final_side:
            raise ShapeMismatchError(
                f"classifier expects {cfg.input_side}px patches but the patch parameters give {self.patch.final_side}px"
            )


def _require(path, what):
    if path is None:
        raise ArtifactMissingError(f"no {what} path configured")
    if not Path(path).exists():
        raise ArtifactMissingError(f"missing {what}: {path}")
    return Path(path)


# --- extract ----------------------------------------------------------------

def _sample_entry(args):
    entry, params = args
    try:
        img = load_image(entry.path)
    except ImageLoadError as exc:
        return entry, [], str(exc)
    return entry, dense_sample(img, params, source_id=entry.source_id, label=entry.label), None


def _clear_split(d: Path):
    manifest = d / MANIFEST_NAME
    if manifest.exists():
        for row in read_manifest(d):
            (d / row["filename"]).unlink(missing_ok=True)
        manifest.unlink()
    (d / SOURCES_NAME).unlink(missing_ok=True)


def run_extract(cfg: RunConfig, workers: int = 1) -> dict:
    """Sample every dataset image and persist patches per split; returns patch counts per split."""
    root = _require(cfg.dataset, "dataset")
    store = cfg.patches
    if store is None:
        raise ArtifactMissingError("no patch store path configured")
    manifest = ingest_dataset(root)
    summary = {}
    for split in SPLITS:
        entries = manifest.split(split)
        d = Path(store) / split
        d.mkdir(parents=True, exist_ok=True)
        _clear_split(d)
        # header-only manifest even when nothing is kept
        persist_patches([], d)
        jobs = [(e, cfg.patch) for e in entries]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(_sample_entry, jobs, chunksize=4))
        else:
            results = map(_sample_entry, jobs)
        written = 0
        with open(d / SOURCES_NAME, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source_id", "image", "label", "scanner", "patch_count", "error"])
            for entry, patches, err in results:
                written += persist_patches(patches, d, append=True)
                w.writerow([entry.source_id, entry.path.relative_to(manifest.root).as_posix(),
                            entry.label.value, entry.scanner, len(patches), err or ""])
                log.info("%s: %d patches", entry.source_id, len(patches))
        summary[split] = written
    return summary


# --- train ------------------------------------------------------------------

def _stack_split(store: Path, split: str, side: int):
    d = store / split
    if not (d / MANIFEST_NAME).exists():
        raise ArtifactMissingError(f"missing patch manifest: {d / MANIFEST_NAME}")
    patches = load_patches(d)
    if patches and patches[0].pixels.width != side:
        raise ShapeMismatchError(f"stored patches are {patches[0].pixels.width}px, classifier expects {side}px")
    return patches


def run_train(cfg: RunConfig):
    store = _require(cfg.patches, "patch store")
    if cfg.model is None:
        raise ArtifactMissingError("no model path configured")
    cfg.check_shapes()
    patches = _stack_split(store, "train", cfg.cnn.input_side)
    if not patches:
        raise ValueError("no training patches in the store")
    x = clf.prepare_batch(patches, cfg.cnn.input_side)
    y = np.array([p.label.index for p in patches])
    model = clf.init_model(cfg.cnn, cfg.seed)
    model, history = clf.train(model, x, y, cfg.train)
    model_path = Path(cfg.model)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    clf.save_model(model, model_path)
    hist_csv = model_path.with_suffix(".history.csv")
    with open(hist_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for h in history:
            w.writerow([h.epoch, f"{h.loss:.8f}", f"{h.accuracy:.6f}"])
    plot_history(history, model_path.with_suffix(".history.png"))
    return model, history


# --- scoring ----------------------------------------------------------------

def _scorer(cfg: RunConfig, model: Optional[clf.ModelWeights] = None):
    if cfg.baseline_threshold is not None:
        t = cfg.baseline_threshold
        return lambda patches: [clf.baseline_classify(p, t) for p in patches]
    if model is None:
        model = clf.load_model(_require(cfg.model, "model"))
    cfg.check_shapes(model.config)

    def score(patches):
        if not patches:
            return []
        probs = clf.predict_proba(model, clf.prepare_batch(patches, model.config.input_side)).astype(np.float64)
        return [PatchScore(float(a), float(b)) for a, b in probs]

    return score


def classify_image(img, cfg: RunConfig, score, source_id: str = "") -> FingerprintResult:
    patches = dense_sample(img, cfg.patch, source_id=source_id)
    return FingerprintResult.from_scores(source_id, [p.grid_origin for p in patches], score(patches))


def run_classify(cfg: RunConfig, target, model: Optional[clf.ModelWeights] = None) -> list[FingerprintResult]:
    """Classify one image file or every PNG/PGM under a directory (sorted)."""
    target = _require(target, "image or directory")
    score = _scorer(cfg, model)
    if target.is_dir():
        paths = sorted(p for p in target.rglob("*") if p.suffix.lower() in (".png", ".pgm") and p.is_file())
    else:
        paths = [target]
    results = []
    for p in paths:
        sid = p.relative_to(target).with_suffix("").as_posix() if target.is_dir() else p.stem
        try:
            img = load_image(p)
        except ImageLoadError as exc:
            results.append(FingerprintResult(sid, error=str(exc)))
            continue
        results.append(classify_image(img, cfg, score, sid))
    return results


# --- evaluate ---------------------------------------------------------------

def _read_sources(d: Path) -> list[dict]:
    path = d / SOURCES_NAME
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_patches(patches: list[Patch], scores: list[PatchScore], sources: list[dict] = ()):
    """Patch-level and fingerprint-level reports plus per-fingerprint results."""
    patch_rep = EvalReport.from_labels("patch", [p.label for p in patches], [s.decision for s in scores])
    by_source: "OrderedDict[str, list]" = OrderedDict()
    truth = {}
    for row in sources:
        by_source.setdefault(row["source_id"], [])
        truth[row["source_id"]] = Label(row["label"])
    for p, s in zip(patches, scores):
        by_source.setdefault(p.source_id, []).append((p.grid_origin, s))
        truth[p.source_id] = p.label
    results = [
        FingerprintResult.from_scores(sid, [o for o, _ in items], [s for _, s in items])
        for sid, items in by_source.items()
    ]
    scored = [r for r in results if r.error is None]
    fp_rep = EvalReport.from_labels("fingerprint", [truth[r.source_id] for r in scored], [r.decision for r in scored])
    return patch_rep, fp_rep, results


def run_evaluate(cfg: RunConfig, model: Optional[clf.ModelWeights] = None):
    store = _require(cfg.patches, "patch store")
    if cfg.report is None:
        raise ArtifactMissingError("no report directory configured")
    score = _scorer(cfg, model)
    d = store / "test"
    side = cfg.patch.final_side
    patches = _stack_split(store, "test", side)
    if any(p.label is None for p in patches):
        raise ValueError("test patches must carry labels")
    patch_rep, fp_rep, results = evaluate_patches(patches, score(patches), _read_sources(d))

    out = Path(cfg.report)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "patch": patch_rep.to_dict(),
        "fingerprint": fp_rep.to_dict(),
        "unscored": [r.source_id for r in results if r.error is not None],
    }
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    (out / "report.csv").write_text("\n".join([csv_header(), patch_rep.csv_row(), fp_rep.csv_row()]) + "\n")
    with open(out / "fingerprints.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "aggregate_live", "aggregate_spoof", "decision", "patch_count", "error"])
        for r in results:
            w.writerow([r.source_id, f"{r.aggregate_live:.6f}", f"{r.aggregate_spoof:.6f}",
                        r.decision.value if r.decision else "", r.patch_count, r.error or ""])
    plot_report([patch_rep, fp_rep], out / "report.png")
    return patch_rep, fp_rep


def run_render(cfg: RunConfig, image, out, model: Optional[clf.ModelWeights] = None) -> FingerprintResult:
    img = load_image(_require(image, "image"))
    result = classify_image(img, cfg, _scorer(cfg, model), Path(image).stem)
    save_overlay(render_overlay(img, result, cfg.patch), out)
    return result


def config_to_dict(cfg: RunConfig) -> dict:
    d = {**asdict(cfg.patch), **asdict(cfg.cnn), **asdict(cfg.train)}
    for k in ("dataset", "patches", "model", "report"):
        v = getattr(cfg, k)
        d[k] = str(v) if v is not None else None
    d["seed"] = cfg.seed
    d["baseline_threshold"] = cfg.baseline_threshold
    d["block_filters"] = list(d["block_filters"])
    d["block_dropout"] = list(d["block_dropout"])
    return d
