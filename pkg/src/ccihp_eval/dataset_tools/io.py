"""Manifests, PNG rasters and prediction files."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from ..maskcore import (
    SEMANTIC_TASKS,
    TASKS,
    BinaryMask,
    LabelMap,
    RleMask,
    check_rle,
    rle_encode,
    rle_foreground_index,
)
from ..samples import SPLITS, ImageSample, PredInstance, Prediction
from ..taxonomy import Taxonomy, load_taxonomy_file

PathLike = Union[str, os.PathLike]


class ManifestError(ValueError):
    pass


class RasterError(OSError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    split: str
    paths: dict[str, str]

    def to_json(self) -> dict:
        return {"id": self.image_id, "split": self.split, **{t: self.paths[t] for t in TASKS}}


@dataclass
class DatasetManifest:
    """Single-file dataset index; raster paths are relative to ``root``."""

    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)
    taxonomy: Optional[str] = None

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate image ids in manifest")
        for e in self.entries:
            missing = [t for t in TASKS if t not in e.paths]
            if missing:
                raise ManifestError(f"{e.image_id}: no raster for {missing}")
            if e.split not in SPLITS:
                raise ManifestError(f"{e.image_id}: unknown split {e.split!r}")

    def path(self, entry: ManifestEntry, task: str) -> Path:
        return self.root / entry.paths[task]

    def load_taxonomy(self) -> Taxonomy:
        if self.taxonomy is None:
            return load_taxonomy_file(None)
        path = Path(self.taxonomy)
        return load_taxonomy_file(path if path.is_absolute() else self.root / path)

    def to_json(self) -> dict:
        return {"root": str(self.root), "taxonomy": self.taxonomy,
                "images": [e.to_json() for e in self.entries]}


def load_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        root = Path(doc.get("root") or ".")
        if not root.is_absolute():
            root = path.parent / root
        entries = [
            ManifestEntry(str(img["id"]), img.get("split", "train"), {t: img[t] for t in TASKS})
            for img in doc["images"]
        ]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    return DatasetManifest(root, entries, doc.get("taxonomy"))


def save_manifest(manifest: DatasetManifest, path: PathLike, relative_root: bool = True) -> None:
    path = Path(path)
    doc = manifest.to_json()
    if relative_root:
        doc["root"] = os.path.relpath(manifest.root, path.parent)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# rasters

def _palette() -> list[int]:
    rng = np.random.default_rng(0)
    colors = rng.integers(0, 256, size=(256, 3))
    colors[0] = 0
    return colors.astype(np.uint8).ravel().tolist()


_PALETTE = _palette()


def read_label_raster(path: PathLike, task: str) -> LabelMap:
    """Read an indexed (semantic) or 16-bit grayscale (instance) PNG."""
    try:
        with Image.open(path) as img:
            img.load()
            if task == "instance":
                if img.mode not in ("I;16", "I", "L", "P"):
                    raise RasterError(f"{path}: instance raster has mode {img.mode}")
                data = np.array(img)
            else:
                if img.mode not in ("P", "L"):
                    raise RasterError(f"{path}: {task} raster must be 8-bit indexed, got {img.mode}")
                data = np.array(img)
    except FileNotFoundError as exc:
        raise RasterError(f"missing raster {path}") from exc
    except OSError as exc:
        if isinstance(exc, RasterError):
            raise
        raise RasterError(f"unreadable raster {path}: {exc}") from exc
    return LabelMap(task, data)


def write_label_raster(path: PathLike, label_map: LabelMap) -> None:
    data = label_map.data
    if label_map.task == "instance":
        if data.size and data.max() > 65535:
            raise ValueError("instance ids exceed 16 bits")
        Image.fromarray(data.astype(np.uint16)).save(path)
    else:
        if data.size and data.max() > 255:
            raise ValueError("semantic classes exceed 8 bits")
        h, w = data.shape
        img = Image.frombytes("P", (w, h), np.ascontiguousarray(data, dtype=np.uint8).tobytes())
        img.putpalette(_PALETTE)
        img.save(path)


def load_sample(manifest: DatasetManifest, entry: ManifestEntry) -> ImageSample:
    maps = {t: read_label_raster(manifest.path(entry, t), t) for t in TASKS}
    return ImageSample(entry.image_id, maps, entry.split)


def write_sample(sample: ImageSample, root: PathLike, subdir: str = "gt") -> ManifestEntry:
    """Write the five rasters of ``sample`` under ``root/subdir/<task>/``."""
    root = Path(root)
    paths = {}
    for task in TASKS:
        rel = Path(subdir) / task / f"{sample.image_id}.png"
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        write_label_raster(root / rel, sample[task])
        paths[task] = rel.as_posix()
    return ManifestEntry(sample.image_id, sample.split, paths)


# ---------------------------------------------------------------------------
# predictions

def decode_rle_map(obj: dict, task: str) -> LabelMap:
    """``{"size": [H, W], "masks": {"<class id>": [counts...]}}`` to a label map."""
    h, w = obj["size"]
    flat = np.zeros(h * w, dtype=np.int64)
    covered = np.zeros(h * w, dtype=bool)
    for key, counts in obj.get("masks", {}).items():
        idx = rle_foreground_index(RleMask((h, w), counts))
        if covered[idx].any():
            raise ManifestError(f"{task} RLE map: class {key} overlaps another class")
        covered[idx] = True
        flat[idx] = int(key)
    return LabelMap(task, flat.reshape(h, w))


def encode_rle_map(label_map: LabelMap) -> dict:
    data = label_map.data
    masks = {}
    for c in sorted(set(np.unique(data).tolist()) - {0}):
        masks[str(c)] = list(rle_encode(BinaryMask(data == c)).counts)
    return {"size": list(data.shape), "masks": masks}


def load_prediction(path: PathLike) -> Prediction:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read prediction {path}: {exc}") from exc
    try:
        h, w = int(doc["height"]), int(doc["width"])
        instances = []
        for inst in doc.get("instances", []):
            rle = RleMask.from_json(inst["mask"])
            check_rle(rle)
            instances.append(PredInstance(float(inst["score"]), rle))
        semantic = {}
        for task, ref in (doc.get("semantic") or {}).items():
            if task not in SEMANTIC_TASKS:
                raise ManifestError(f"{path}: unknown semantic task {task!r}")
            if isinstance(ref, str):
                semantic[task] = read_label_raster(path.parent / ref, task)
            else:
                semantic[task] = decode_rle_map(ref, task)
            if semantic[task].shape != (h, w):
                raise ManifestError(f"{path}: {task} map is {semantic[task].shape}, expected {(h, w)}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(f"malformed prediction {path}: {exc}") from exc
    return Prediction(str(doc["image_id"]), h, w, tuple(instances), semantic)


def save_prediction(pred: Prediction, path: PathLike, raster_dir: Optional[PathLike] = None) -> None:
    """Write a prediction file; semantic maps go inline as RLE maps unless
    ``raster_dir`` is given, in which case they are written as PNGs."""
    path = Path(path)
    semantic = {}
    for task, m in sorted(pred.semantic.items()):
        if raster_dir is None:
            semantic[task] = encode_rle_map(m)
        else:
            out = Path(raster_dir) / task / f"{pred.image_id}.png"
            out.parent.mkdir(parents=True, exist_ok=True)
            write_label_raster(out, m)
            semantic[task] = os.path.relpath(out, path.parent)
    doc = {
        "image_id": pred.image_id,
        "height": pred.height,
        "width": pred.width,
        "instances": [{"score": i.score, "mask": i.mask.to_json()} for i in pred.instances],
        "semantic": semantic,
    }
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")


def prediction_path(pred_dir: PathLike, image_id: str) -> Path:
    return Path(pred_dir) / f"{image_id}.json"


@dataclass(frozen=True)
class ManifestSource:
    """Lazily loads one manifest image and its prediction file (if any)."""

    manifest: DatasetManifest
    entry: ManifestEntry
    pred_dir: Optional[Path]

    @property
    def image_id(self) -> str:
        return self.entry.image_id

    def load(self):
        sample = load_sample(self.manifest, self.entry)
        pred = None
        if self.pred_dir is not None:
            p = prediction_path(self.pred_dir, self.image_id)
            if p.exists():
                pred = load_prediction(p)
        return sample, pred
