"""Dataset-level evaluation: per-image map step, deterministic merge, final AP pass."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from . import instance_metrics as im
from .maskcore import CHARACTERISTIC_TASKS, SEMANTIC_TASKS, DimensionMismatch, LabelMap, rle_foreground_index
from .parallel import ordered_map
from .samples import ImageSample, Prediction
from .semantic_metrics import ConfusionMatrix, accumulate, merge, report_entry
from .taxonomy import Taxonomy

METRIC_NAMES = ("miou", "ap_r", "ap_p", "ap_cr")


@dataclass(frozen=True)
class EvalSettings:
    tasks: tuple[str, ...] = SEMANTIC_TASKS
    metrics: tuple[str, ...] = METRIC_NAMES
    thresholds: tuple[float, ...] = im.DEFAULT_THRESHOLDS
    granularity: str = "per_attribute_region"

    def __post_init__(self):
        bad = set(self.tasks) - set(SEMANTIC_TASKS)
        if bad:
            raise ValueError(f"unknown tasks {sorted(bad)}")
        bad = set(self.metrics) - set(METRIC_NAMES)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}")
        check_thresholds(self.thresholds)
        if self.granularity not in im.GRANULARITIES:
            raise ValueError(f"unknown unit granularity {self.granularity!r}")

    @property
    def characteristic_tasks(self) -> tuple[str, ...]:
        return tuple(t for t in self.tasks if t in CHARACTERISTIC_TASKS)


def check_thresholds(thresholds: Sequence[float]) -> None:
    if not thresholds:
        raise ValueError("at least one IoU threshold is required")
    if any(not 0 < t < 1 for t in thresholds):
        raise ValueError("thresholds must lie strictly inside (0, 1)")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")


class ImageSource(Protocol):
    image_id: str

    def load(self) -> tuple[ImageSample, Optional[Prediction]]: ...


@dataclass(frozen=True, eq=False)
class InMemorySource:
    sample: ImageSample
    prediction: Optional[Prediction]

    @property
    def image_id(self) -> str:
        return self.sample.image_id

    def load(self):
        return self.sample, self.prediction


@dataclass(frozen=True)
class FamilyData:
    """Units and overlaps of one metric family in one image (rows are ingest order)."""

    pred_class: np.ndarray
    pred_score: np.ndarray
    gt_class: np.ndarray
    gt_first: np.ndarray
    pairs: im.PairSet

    @classmethod
    def from_tables(cls, pred: im.UnitTable, gt: im.UnitTable, pairs: im.PairSet) -> "FamilyData":
        return cls(pred.class_id, pred.score, gt.class_id, gt.first_pixel, pairs)

    @property
    def counts(self) -> tuple[int, int]:
        return int(self.pred_class.size), int(self.gt_class.size)


@dataclass
class ImageResult:
    """Everything one image contributes; merged across images in id order."""

    image_id: str
    missing_prediction: bool
    confusion: dict[str, ConfusionMatrix] = field(default_factory=dict)
    # "ap_r", "ap_p" or "ap_cr:<task>" -> units and overlaps
    families: dict[str, FamilyData] = field(default_factory=dict)


def rasterize_instances(pred: Prediction) -> tuple[LabelMap, dict[int, float]]:
    """Paint predicted instances into one map; instance ``k`` is list entry ``k - 1``.

    Higher scores win overlapping pixels; equal scores go to the earlier entry.
    """
    flat = np.zeros(pred.height * pred.width, dtype=np.int32)
    order = sorted(range(len(pred.instances)), key=lambda k: (pred.instances[k].score, -k))
    for k in order:
        inst = pred.instances[k]
        if tuple(inst.mask.size) != (pred.height, pred.width):
            raise DimensionMismatch(f"instance mask {inst.mask.size} in a {pred.height}x{pred.width} prediction")
        flat[rle_foreground_index(inst.mask)] = k + 1
    scores = {k + 1: float(inst.score) for k, inst in enumerate(pred.instances)}
    return LabelMap("instance", flat.reshape(pred.height, pred.width)), scores


def evaluate_image(sample: ImageSample, pred: Optional[Prediction], taxonomy: Taxonomy,
                   settings: EvalSettings) -> ImageResult:
    """The per-image map step: confusion matrices plus unit tables and overlaps.

    Everything here is linear in the pixel count; matching waits for the merge.
    """
    h, w = sample.shape
    missing = pred is None
    if pred is None:
        pred = Prediction.empty(sample.image_id, h, w)
    if (pred.height, pred.width) != (h, w):
        raise DimensionMismatch(f"{sample.image_id}: prediction {pred.height}x{pred.width} vs gt {h}x{w}")
    out = ImageResult(sample.image_id, missing)

    if "miou" in settings.metrics:
        for task in settings.tasks:
            out.confusion[task] = accumulate(sample[task], pred.semantic_map(task),
                                             taxonomy.num_classes(task))

    want_r, want_p = "ap_r" in settings.metrics, "ap_p" in settings.metrics
    want_cr = "ap_cr" in settings.metrics and settings.characteristic_tasks
    if not (want_r or want_p or want_cr):
        return out

    gt_inst, gt_attr = sample["instance"], sample["attribute"]
    pred_inst, scores = rasterize_instances(pred)
    score_list = [scores[k] for k in range(1, len(scores) + 1)]
    pred_attr = pred.semantic_map("attribute")

    if want_r or want_p:
        gt_regions = im.region_table(gt_inst, gt_attr)
        pred_regions = im.region_table(pred_inst, pred_attr, score_list)
        region_pairs = im.table_pairs(pred_regions, gt_regions)
        if want_r:
            out.families["ap_r"] = FamilyData.from_tables(pred_regions, gt_regions, region_pairs)
        if want_p:
            gt_persons = im.person_table(gt_inst)
            pred_persons = im.person_table(pred_inst, score_list)
            pairs = im.person_pairs(pred_persons, gt_persons, pred_regions, gt_regions, region_pairs)
            out.families["ap_p"] = FamilyData.from_tables(pred_persons, gt_persons, pairs)

    if want_cr:
        for task in settings.characteristic_tasks:
            gt_units = im.characterized_table(gt_inst, gt_attr, sample[task], taxonomy, task,
                                              granularity=settings.granularity)
            pred_units = im.characterized_table(pred_inst, pred_attr, pred.semantic_map(task),
                                                taxonomy, task, score_list, settings.granularity)
            out.families[f"ap_cr:{task}"] = FamilyData.from_tables(
                pred_units, gt_units, im.table_pairs(pred_units, gt_units))
    return out


def _run_one(args):
    source, taxonomy, settings = args
    sample, pred = source.load()
    if sample.image_id != source.image_id:
        raise ValueError(f"source {source.image_id!r} loaded sample {sample.image_id!r}")
    return evaluate_image(sample, pred, taxonomy, settings)


def map_images(sources: Sequence[ImageSource], taxonomy: Taxonomy, settings: EvalSettings,
               workers: int = 1) -> list[ImageResult]:
    """Per-image results, always in ascending image-id order."""
    ordered = sorted(sources, key=lambda s: s.image_id)
    ids = [s.image_id for s in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids")
    return ordered_map(_run_one, [(s, taxonomy, settings) for s in ordered], workers)


def family_aps(results: Sequence[ImageResult], family: str, thresholds,
               class_ids: Sequence[int]) -> dict[int, list[float]]:
    """Pool one family over images (in the given order), match, and integrate per class.

    Ingest orders continue across images, so pooled ranking ties fall back
    to image order, then unit order within the image.
    """
    parts = [(i, r.families[family]) for i, r in enumerate(results) if family in r.families]
    n_t = len(thresholds)
    if not parts:
        return {}
    pred_class = np.concatenate([f.pred_class for _, f in parts])
    score = np.concatenate([f.pred_score for _, f in parts])
    gt_class = np.concatenate([f.gt_class for _, f in parts])
    gt_first = np.concatenate([f.gt_first for _, f in parts])
    image = np.concatenate([np.full(f.pred_class.size, i, np.int64) for i, f in parts])
    pair_pred, pair_gt, pair_val = [], [], []
    pred_off = gt_off = 0
    for _, f in parts:
        pair_pred.append(f.pairs.pred + pred_off)
        pair_gt.append(f.pairs.gt + gt_off)
        pair_val.append(f.pairs.value)
        n_pred, n_gt = f.counts
        pred_off += n_pred
        gt_off += n_gt
    pairs = im.PairSet(np.concatenate(pair_pred).astype(np.int64),
                       np.concatenate(pair_gt).astype(np.int64),
                       np.concatenate(pair_val).astype(np.float64))
    ingest = np.arange(pred_class.size, dtype=np.int64)
    n_classes = int(max(pred_class.max(initial=0), gt_class.max(initial=0))) + 1
    matched = im.match_arrays(image * n_classes + pred_class, score, ingest, gt_first, pairs, thresholds)
    tp = matched >= 0

    out = {}
    gt_counts = np.bincount(gt_class, minlength=n_classes)
    for c in class_ids:
        n_gt = int(gt_counts[c]) if c < n_classes else 0
        if n_gt == 0:
            continue
        sel = pred_class == c
        out[c] = im.ap_arrays(score[sel], ingest[sel], tp[sel].reshape(-1, n_t), n_gt)
    return out


def reduce_results(results: Sequence[ImageResult], taxonomy: Taxonomy,
                   settings: EvalSettings) -> dict:
    """Merge per-image results into the metric report (no config header)."""
    report: dict = {}
    thresholds = settings.thresholds
    extra = {"unit_granularity": settings.granularity}
    if "miou" in settings.metrics:
        report["miou"] = {}
        for task in settings.tasks:
            n = taxonomy.num_classes(task)
            cm = ConfusionMatrix.zero(task, n)
            for r in results:
                cm = merge(cm, r.confusion[task])
            report["miou"][task] = report_entry(cm, taxonomy.names(task))
    if "ap_r" in settings.metrics:
        names = taxonomy.names("attribute")
        aps = family_aps(results, "ap_r", thresholds, range(1, len(names) + 1))
        report["ap_r"] = im.report_from_aps("ap_r", thresholds, names, aps, config=extra).to_json()
    if "ap_p" in settings.metrics:
        aps = family_aps(results, "ap_p", thresholds, [0])
        person = {1: aps[0]} if 0 in aps else {}
        report["ap_p"] = im.report_from_aps("ap_p", thresholds, ["person"], person,
                                            config=extra).to_json()
    if "ap_cr" in settings.metrics and settings.characteristic_tasks:
        report["ap_cr"] = {}
        for task in settings.characteristic_tasks:
            names = taxonomy.names(task)
            aps = family_aps(results, f"ap_cr:{task}", thresholds, range(1, len(names) + 1))
            report["ap_cr"][task] = im.report_from_aps(
                "ap_cr", thresholds, names, aps, task=task, config=extra).to_json()
    report["metadata"] = {
        "images": len(results),
        "missing_predictions": [r.image_id for r in results if r.missing_prediction],
    }
    return report


def evaluate(sources: Sequence[ImageSource], taxonomy: Taxonomy,
             settings: EvalSettings = EvalSettings(), workers: int = 1) -> dict:
    return reduce_results(map_images(sources, taxonomy, settings, workers), taxonomy, settings)


def evaluate_samples(samples: Sequence[ImageSample], predictions: dict, taxonomy: Taxonomy,
                     settings: EvalSettings = EvalSettings(), workers: int = 1) -> dict:
    """Convenience wrapper over in-memory samples; ``predictions`` maps image id to Prediction."""
    sources = [InMemorySource(s, predictions.get(s.image_id)) for s in samples]
    return evaluate(sources, taxonomy, settings, workers)
