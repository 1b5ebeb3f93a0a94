"""Instance-level AP metrics over region, person and characterized-region units.

All three metrics share one score-ranked greedy matcher and one all-point
interpolated AP integrator. Units of one image are disjoint, so pairwise
overlaps come from a single joint histogram of two segment rasters instead
of per-pair mask operations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .maskcore import (
    CHARACTERISTIC_TASKS,
    BinaryMask,
    DimensionMismatch,
    LabelMap,
    mask_iou,
)
from .taxonomy import Taxonomy, default_taxonomy

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
GRANULARITIES = ("per_attribute_region", "per_instance")
METRICS = ("ap_r", "ap_p", "ap_cr")


class MixedClasses(ValueError):
    pass


class NoGroundTruth(ValueError):
    pass


class BothEmpty(ValueError):
    pass


class NotACharacteristicTask(ValueError):
    pass


class UnitLayer:
    """Segment raster shared by the units extracted from one image.

    ``segments`` holds 0 where no unit lies and ``k`` on the pixels of the
    k-th unit (1-based).
    """

    __slots__ = ("segments", "count", "__weakref__")

    def __init__(self, segments: np.ndarray, count: int):
        self.segments = segments
        self.count = count

    @property
    def shape(self):
        return self.segments.shape


class EvalUnit:
    """One (image, instance, class) mask; predictions carry a score."""

    __slots__ = ("image_id", "instance_id", "class_id", "score", "ingest_order",
                 "attribute_id", "area", "first_pixel", "parts",
                 "_mask", "_layer", "_segment")

    def __init__(self, image_id, instance_id: int, class_id: int,
                 mask: Optional[BinaryMask] = None, score: Optional[float] = None,
                 ingest_order: int = 0, attribute_id: Optional[int] = None,
                 parts: Optional[LabelMap] = None, *,
                 layer: Optional[UnitLayer] = None, segment: int = 0,
                 area: Optional[int] = None, first_pixel: Optional[int] = None):
        self.image_id = image_id
        self.instance_id = instance_id
        self.class_id = class_id
        self.score = None if score is None else float(score)
        self.ingest_order = ingest_order
        self.attribute_id = attribute_id
        self.parts = parts
        self._mask = mask
        self._layer = layer
        self._segment = segment
        if mask is None and layer is None:
            raise ValueError("unit needs a mask or a segment layer")
        if area is None or first_pixel is None:
            bits = self.mask.bits.ravel()
            area = int(np.count_nonzero(bits))
            first_pixel = int(np.argmax(bits)) if area else -1
        self.area = area
        self.first_pixel = first_pixel
        if self.score is None and area == 0:
            raise ValueError("ground-truth units must have non-empty masks")

    @property
    def is_prediction(self) -> bool:
        return self.score is not None

    @property
    def mask(self) -> BinaryMask:
        if self._mask is None:
            self._mask = BinaryMask(self._layer.segments == self._segment)
        return self._mask

    def __repr__(self):
        kind = f"score={self.score}" if self.is_prediction else "gt"
        return (f"EvalUnit(image={self.image_id!r}, instance={self.instance_id}, "
                f"class={self.class_id}, area={self.area}, {kind})")


@dataclass(frozen=True)
class Outcome:
    score: float
    ingest_order: int
    image_id: object
    matched_gt: Optional[int]  # ingest order of the consumed GT unit

    @property
    def is_tp(self) -> bool:
        return self.matched_gt is not None


@dataclass(frozen=True)
class MatchResult:
    threshold: float
    outcomes: tuple[Outcome, ...]
    n_gt: int

    @property
    def tp_count(self) -> int:
        return sum(o.is_tp for o in self.outcomes)

    def shifted(self, pred_offset: int, gt_offset: int) -> "MatchResult":
        return MatchResult(self.threshold, tuple(
            Outcome(o.score, o.ingest_order + pred_offset, o.image_id,
                    None if o.matched_gt is None else o.matched_gt + gt_offset)
            for o in self.outcomes), self.n_gt)

    @staticmethod
    def concatenate(results: Sequence["MatchResult"], threshold: float) -> "MatchResult":
        outcomes = []
        n_gt = 0
        for r in results:
            if r.threshold != threshold:
                raise ValueError("cannot pool match results of different thresholds")
            outcomes.extend(r.outcomes)
            n_gt += r.n_gt
        return MatchResult(threshold, tuple(outcomes), n_gt)


@dataclass(frozen=True)
class ClassAp:
    per_threshold: Optional[tuple[float, ...]]
    volume: Optional[float]

    @property
    def defined(self) -> bool:
        return self.volume is not None


@dataclass
class ApReport:
    metric: str
    thresholds: tuple[float, ...]
    per_class: dict[str, ClassAp]
    overall: Optional[float]
    config: dict = field(default_factory=dict)
    task: Optional[str] = None

    def to_json(self) -> dict:
        out = {
            "metric": self.metric,
            "thresholds": list(self.thresholds),
            "per_class": {
                name: {"per_threshold": None if ap.per_threshold is None else list(ap.per_threshold),
                       "volume": ap.volume}
                for name, ap in self.per_class.items()
            },
            "overall": self.overall,
            "config": dict(self.config),
        }
        if self.task is not None:
            out["task"] = self.task
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ApReport":
        per_class = {
            name: ClassAp(None if v["per_threshold"] is None else tuple(v["per_threshold"]), v["volume"])
            for name, v in obj["per_class"].items()
        }
        return cls(obj["metric"], tuple(obj["thresholds"]), per_class, obj["overall"],
                   dict(obj.get("config", {})), obj.get("task"))


def report_config(thresholds: Sequence[float], **extra) -> dict:
    return {
        "tie_break": "score_desc_then_ingest_order_asc",
        "gt_tie_break": "first_pixel_row_major",
        "integration": "all_point_interpolated",
        "thresholds": list(thresholds),
        "discard_empty_pred_units": True,
        **extra,
    }


# ---------------------------------------------------------------------------
# unit extraction


def _check_same_shape(*maps: LabelMap) -> None:
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise DimensionMismatch(f"label maps disagree on shape: {sorted(shapes)}")


def _score_array(scores, instance_ids: np.ndarray) -> Optional[np.ndarray]:
    """Per-unit scores looked up from a mapping or a sequence indexed by id - 1."""
    if scores is None:
        return None
    if isinstance(scores, Mapping):
        return np.array([float(scores[i]) for i in instance_ids.tolist()], dtype=np.float64)
    table = np.asarray(scores, dtype=np.float64)
    return table[instance_ids - 1]


@dataclass(frozen=True)
class UnitTable:
    """Columnar form of the units one image yields for one metric family.

    Row ``k`` is unit ``k``; it covers the pixels where ``layer.segments``
    equals ``k + 1``. Rows are sorted by unit key, so the row index is the
    unit's ingestion order within the image.
    """

    layer: UnitLayer
    instance_id: np.ndarray
    class_id: np.ndarray
    attribute_id: np.ndarray  # -1 where a unit spans several attributes
    area: np.ndarray
    first_pixel: np.ndarray
    score: Optional[np.ndarray] = None  # None for ground truth

    def __len__(self) -> int:
        return int(self.class_id.size)

    @property
    def is_prediction(self) -> bool:
        return self.score is not None


def _segment_table(instance: np.ndarray, keys: Sequence[np.ndarray], valid: np.ndarray):
    """Split the ``valid`` pixels by key (instance, *keys).

    Returns the segment layer, the sorted unique keys (one row per unit),
    unit areas and first row-major pixels. Linear in pixels when the key
    space is small, which it is for label maps.
    """
    shape = instance.shape
    flat_valid = np.flatnonzero(valid.ravel())
    n_cols = 1 + len(keys)
    if flat_valid.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return (UnitLayer(np.zeros(shape, dtype=np.int32), 0),
                np.zeros((0, n_cols), dtype=np.int64), empty, empty)
    columns = [instance.ravel()[flat_valid].astype(np.int64)]
    columns += [k.ravel()[flat_valid].astype(np.int64) for k in keys]
    # pack the key columns into one int64 (mixed radix)
    radices = [int(c.max()) + 1 for c in columns]
    space = math.prod(radices)
    if space >= 2 ** 62:
        raise OverflowError("unit keys do not fit in 64 bits")
    packed = columns[0].copy()
    for col, radix in zip(columns[1:], radices[1:]):
        packed *= radix
        packed += col

    if space <= max(4 * flat_valid.size, 4096):
        counts = np.bincount(packed, minlength=space)
        uniq = np.flatnonzero(counts)
        lookup = np.zeros(space, dtype=np.int32)
        lookup[uniq] = np.arange(1, uniq.size + 1, dtype=np.int32)
        seg = lookup[packed]
        areas = counts[uniq]
        # a segment's first pixel always starts a run, so only run starts compete
        starts = np.flatnonzero(np.diff(seg, prepend=0))
        first = np.full(uniq.size, flat_valid[-1], dtype=np.int64)
        np.minimum.at(first, seg[starts] - 1, flat_valid[starts])
    else:
        uniq, first_idx, inverse, areas = np.unique(packed, return_index=True,
                                                    return_inverse=True, return_counts=True)
        seg = inverse.reshape(-1).astype(np.int32) + 1
        first = flat_valid[first_idx]

    segments = np.zeros(shape[0] * shape[1], dtype=np.int32)
    segments[flat_valid] = seg
    digits = []
    rest = uniq.astype(np.int64)
    for radix in reversed(radices[1:]):
        rest, d = np.divmod(rest, radix)
        digits.append(d)
    key_rows = np.stack([rest, *reversed(digits)], axis=1)
    return (UnitLayer(segments.reshape(shape), int(uniq.size)), key_rows,
            areas.astype(np.int64), first.astype(np.int64))


def _table(instance, keys, valid, scores, class_col: Optional[int], attr_col: Optional[int]):
    layer, rows, areas, first = _segment_table(instance, keys, valid)
    inst = rows[:, 0]
    none = np.full(inst.size, -1, dtype=np.int64)
    classes = rows[:, class_col] if class_col is not None else np.zeros(inst.size, dtype=np.int64)
    attrs = rows[:, attr_col] if attr_col is not None else none
    return UnitTable(layer, inst, classes, attrs, areas, first, _score_array(scores, inst))


def region_table(instance_map: LabelMap, attribute_map: LabelMap, scores=None) -> UnitTable:
    """Units per (instance, attribute class); class = attribute."""
    _check_same_shape(instance_map, attribute_map)
    inst, attr = instance_map.data, attribute_map.data
    return _table(inst, [attr], (inst > 0) & (attr > 0), scores, 1, 1)


def characterized_table(instance_map: LabelMap, attribute_map: LabelMap,
                        characteristic_map: LabelMap, taxonomy: Taxonomy, task: str,
                        scores=None, granularity: str = "per_attribute_region") -> UnitTable:
    """Units over instanced, characterized, characterizable pixels; class = characteristic."""
    if task not in CHARACTERISTIC_TASKS:
        raise NotACharacteristicTask(task)
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown unit granularity {granularity!r}")
    _check_same_shape(instance_map, attribute_map, characteristic_map)
    inst, attr, char = instance_map.data, attribute_map.data, characteristic_map.data
    eligible = np.zeros(max(int(attr.max(initial=0)) + 1, taxonomy.num_classes("attribute")), dtype=bool)
    eligible[list(taxonomy.characterizable_ids())] = True
    valid = (inst > 0) & (char > 0) & eligible[attr]
    if granularity == "per_attribute_region":
        return _table(inst, [attr, char], valid, scores, 2, 1)
    return _table(inst, [char], valid, scores, 1, None)


def person_table(instance_map: LabelMap, scores=None) -> UnitTable:
    """One unit per instance id; class 0."""
    inst = instance_map.data
    return _table(inst, [], inst > 0, scores, None, None)


def _units_from_table(table: UnitTable, image_id, ingest_start: int,
                      parts: Optional[LabelMap] = None) -> list[EvalUnit]:
    units = []
    scores = table.score.tolist() if table.score is not None else None
    attrs = table.attribute_id.tolist()
    for k, (inst, cls, area, first) in enumerate(zip(
            table.instance_id.tolist(), table.class_id.tolist(),
            table.area.tolist(), table.first_pixel.tolist())):
        units.append(EvalUnit(
            image_id, inst, cls, score=None if scores is None else scores[k],
            ingest_order=ingest_start + k, attribute_id=None if attrs[k] < 0 else attrs[k],
            parts=parts, layer=table.layer, segment=k + 1, area=area, first_pixel=first))
    return units


def extract_region_units(instance_map: LabelMap, attribute_map: LabelMap, image_id,
                         scores=None, ingest_start: int = 0) -> list[EvalUnit]:
    """One unit per (instance, attribute class) with a non-empty overlap.

    ``scores`` (mapping or sequence indexed by instance id - 1) turns the
    units into predictions that inherit their instance's score.
    """
    return _units_from_table(region_table(instance_map, attribute_map, scores), image_id, ingest_start)


def extract_characterized_units(instance_map: LabelMap, attribute_map: LabelMap,
                                characteristic_map: LabelMap, taxonomy: Taxonomy, task: str,
                                image_id, scores=None, granularity: str = "per_attribute_region",
                                ingest_start: int = 0) -> list[EvalUnit]:
    """Units over instanced, characterized attribute regions; class = characteristic.

    Only attributes the taxonomy marks as characterizable contribute.
    """
    table = characterized_table(instance_map, attribute_map, characteristic_map, taxonomy, task,
                                scores, granularity)
    return _units_from_table(table, image_id, ingest_start)


def extract_person_units(instance_map: LabelMap, attribute_map: LabelMap, image_id,
                         scores=None, ingest_start: int = 0) -> list[EvalUnit]:
    """One unit per person; ``parts`` holds the attribute map for part scoring."""
    _check_same_shape(instance_map, attribute_map)
    return _units_from_table(person_table(instance_map, scores), image_id, ingest_start,
                             parts=attribute_map)

# ---------------------------------------------------------------------------
# overlaps


@dataclass(frozen=True)
class PairSet:
    """Sparse (prediction row, GT row, value) triples with a non-zero value."""

    pred: np.ndarray
    gt: np.ndarray
    value: np.ndarray

    def __len__(self) -> int:
        return int(self.value.size)

    @staticmethod
    def empty() -> "PairSet":
        return PairSet(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64))


def _joint_counts(a: np.ndarray, b: np.ndarray, na: int, nb: int):
    """Co-occurrence counts of two segment rasters, sparse: (a, b, count) with a, b >= 1."""
    a, b = a.ravel(), b.ravel()
    both = np.flatnonzero((a > 0) & (b > 0))
    joint = a[both].astype(np.int64) * (nb + 1) + b[both]
    space = (na + 1) * (nb + 1)
    if space <= max(4 * both.size, 4096):
        counts = np.bincount(joint, minlength=space)
        codes = np.flatnonzero(counts)
        counts = counts[codes]
    else:
        codes, counts = np.unique(joint, return_counts=True)
    ia, ib = np.divmod(codes, nb + 1)
    return ia, ib, counts.astype(np.int64)


def table_pairs(pred: UnitTable, gt: UnitTable, same_class: bool = True) -> PairSet:
    """IoU of every overlapping (prediction, GT) unit pair of one image, in O(pixels)."""
    if pred.layer.shape != gt.layer.shape:
        raise DimensionMismatch(f"{pred.layer.shape} vs {gt.layer.shape}")
    if not len(pred) or not len(gt):
        return PairSet.empty()
    gi, pi, inter = _joint_counts(gt.layer.segments, pred.layer.segments, len(gt), len(pred))
    gi -= 1
    pi -= 1
    if same_class:
        keep = gt.class_id[gi] == pred.class_id[pi]
        gi, pi, inter = gi[keep], pi[keep], inter[keep]
    value = inter / (pred.area[pi] + gt.area[gi] - inter)
    order = np.lexsort((gi, pi))
    return PairSet(pi[order], gi[order], value[order])


def person_pairs(pred_persons: UnitTable, gt_persons: UnitTable,
                 pred_regions: UnitTable, gt_regions: UnitTable, region_pairs: PairSet) -> PairSet:
    """Part-based person scores derived from region IoUs; pairs with no shared part are 0."""
    def classes_of(regions: UnitTable) -> dict:
        out: dict = {}
        for inst, c in zip(regions.instance_id.tolist(), regions.class_id.tolist()):
            out.setdefault(inst, set()).add(c)
        return out

    p_classes, g_classes = classes_of(pred_regions), classes_of(gt_regions)
    p_inst = pred_regions.instance_id[region_pairs.pred].tolist()
    g_inst = gt_regions.instance_id[region_pairs.gt].tolist()
    shared: dict = {}
    for pi, gi, v in zip(p_inst, g_inst, region_pairs.value.tolist()):
        shared.setdefault((pi, gi), []).append(v)
    p_row = {inst: k for k, inst in enumerate(pred_persons.instance_id.tolist())}
    g_row = {inst: k for k, inst in enumerate(gt_persons.instance_id.tolist())}
    rows = []
    for (pi, gi), ious in sorted(shared.items()):
        n = len(p_classes[pi] | g_classes[gi])
        rows.append((p_row[pi], g_row[gi], math.fsum(ious) / n))
    if not rows:
        return PairSet.empty()
    p, g, v = zip(*rows)
    return PairSet(np.array(p, np.int64), np.array(g, np.int64), np.array(v, np.float64))


def _layer_overlaps(gt_layer: UnitLayer, pred_layer: UnitLayer) -> np.ndarray:
    """Intersection areas, indexed [gt segment, pred segment] (row/col 0 = none)."""
    if gt_layer.shape != pred_layer.shape:
        raise DimensionMismatch(f"{gt_layer.shape} vs {pred_layer.shape}")
    ng, np_ = gt_layer.count + 1, pred_layer.count + 1
    joint = gt_layer.segments.ravel().astype(np.int64) * np_ + pred_layer.segments.ravel()
    return np.bincount(joint, minlength=ng * np_).reshape(ng, np_)


def pairwise_ious(preds: Sequence[EvalUnit], gts: Sequence[EvalUnit],
                  same_class: bool = True) -> dict:
    """Non-zero IoUs keyed by ``(pred, gt)`` for units of the same image."""
    by_image_gt: dict = {}
    for g in gts:
        by_image_gt.setdefault(g.image_id, []).append(g)
    by_image_pred: dict = {}
    for p in preds:
        by_image_pred.setdefault(p.image_id, []).append(p)

    table = {}
    for image_id, image_preds in by_image_pred.items():
        image_gts = by_image_gt.get(image_id)
        if not image_gts:
            continue
        pred_layers = {id(p._layer) for p in image_preds}
        gt_layers = {id(g._layer) for g in image_gts}
        if (len(pred_layers) == 1 and len(gt_layers) == 1
                and image_preds[0]._layer is not None and image_gts[0]._layer is not None):
            inter = _layer_overlaps(image_gts[0]._layer, image_preds[0]._layer)
            for p in image_preds:
                column = inter[:, p._segment]
                for g in image_gts:
                    if same_class and g.class_id != p.class_id:
                        continue
                    i = int(column[g._segment])
                    if i:
                        table[(p, g)] = i / (p.area + g.area - i)
        else:
            for p in image_preds:
                for g in image_gts:
                    if same_class and g.class_id != p.class_id:
                        continue
                    v = mask_iou(p.mask, g.mask)
                    if v:
                        table[(p, g)] = v
    return table


# ---------------------------------------------------------------------------
# matching and integration


def _rank_within_groups(group: np.ndarray, score: np.ndarray, ingest: np.ndarray) -> np.ndarray:
    """0-based position of each prediction in its group's (-score, ingest) order."""
    order = np.lexsort((ingest, -score, group))
    sorted_group = group[order]
    starts = np.flatnonzero(np.r_[True, sorted_group[1:] != sorted_group[:-1]])
    lengths = np.diff(np.r_[starts, order.size])
    rank = np.empty(order.size, dtype=np.int64)
    rank[order] = np.arange(order.size) - np.repeat(starts, lengths)
    return rank


def match_arrays(group: np.ndarray, score: np.ndarray, ingest: np.ndarray,
                 gt_first: np.ndarray, pairs: PairSet, thresholds: Sequence[float]) -> np.ndarray:
    """Greedy matching for every group and threshold at once.

    ``group`` labels each prediction with the (image, class) pool it competes
    in; pairs only join a prediction to GT rows of its own group. Within a
    group predictions are taken by descending score, then ascending
    ``ingest``; each takes the open GT with the highest value (ties: lowest
    ``gt_first``) and consumes it if the value reaches the threshold.

    Returns ``matched[pred, t]``: the consumed GT row, or -1.
    """
    thr = np.asarray(thresholds, dtype=np.float64)
    n_pred, n_t = group.size, thr.size
    matched = np.full((n_pred, n_t), -1, dtype=np.int64)
    if not len(pairs):
        return matched
    rank = _rank_within_groups(group, score, ingest)
    # predictions of equal rank sit in different groups, so they never share
    # a GT: each rank is one vectorized round
    pr = rank[pairs.pred]
    order = np.lexsort((gt_first[pairs.gt], -pairs.value, pairs.pred, pr))
    p_pred, p_gt, p_val, pr = pairs.pred[order], pairs.gt[order], pairs.value[order], pr[order]
    bounds = np.searchsorted(pr, np.arange(int(pr[-1]) + 2))
    is_open = np.ones((int(gt_first.size), n_t), dtype=bool)
    for r in range(bounds.size - 1):
        lo, hi = bounds[r], bounds[r + 1]
        if lo == hi:
            continue
        pp, gg, vv = p_pred[lo:hi], p_gt[lo:hi], p_val[lo:hi]
        n_rows = hi - lo
        cand = np.where(is_open[gg], np.arange(n_rows)[:, None], n_rows)
        seg = np.flatnonzero(np.r_[True, pp[1:] != pp[:-1]])
        best = np.minimum.reduceat(cand, seg, axis=0)
        found = best < n_rows
        best = np.where(found, best, 0)
        hit = found & (vv[best] >= thr[None, :])
        s_i, t_i = np.nonzero(hit)
        g_sel = gg[best[s_i, t_i]]
        matched[pp[seg][s_i], t_i] = g_sel
        is_open[g_sel, t_i] = False
    return matched


def ap_arrays(score: np.ndarray, ingest: np.ndarray, tp: np.ndarray, n_gt: int) -> list[float]:
    """Per-threshold all-point AP of one class; ``tp`` is (predictions, thresholds)."""
    if n_gt < 1:
        raise NoGroundTruth("average precision needs at least one GT unit")
    if score.size == 0:
        return [0.0] * tp.shape[1]
    order = np.lexsort((ingest, -score))
    hits = tp[order]
    precision = np.cumsum(hits, axis=0) / np.arange(1, score.size + 1)[:, None]
    envelope = np.maximum.accumulate(precision[::-1], axis=0)[::-1]
    return [math.fsum(envelope[hits[:, t], t].tolist()) / n_gt for t in range(tp.shape[1])]


def rank_predictions(preds: Iterable[EvalUnit]) -> list[EvalUnit]:
    return sorted(preds, key=lambda p: (-p.score, p.ingest_order))


def greedy_match(preds: Sequence[EvalUnit], gts: Sequence[EvalUnit], threshold: float,
                 ious: Union[Mapping, None] = None) -> MatchResult:
    """Score-ranked greedy matching of one class, per image.

    Each prediction, in descending score order (ties: ascending ingest
    order), takes the unconsumed GT unit of its image with the highest IoU
    (ties: lowest first pixel). It is a TP if that IoU reaches ``threshold``.
    ``ious`` maps ``(pred, gt)`` to a precomputed overlap; absent pairs are 0.
    """
    classes = {u.class_id for u in preds} | {u.class_id for u in gts}
    if len(classes) > 1:
        raise MixedClasses(f"units span classes {sorted(classes)}")
    if any(p.score is None for p in preds):
        raise ValueError("every prediction needs a score")
    if ious is None:
        ious = pairwise_ious(preds, gts)

    images: dict = {}
    gt_rows: dict = {}
    for k, g in enumerate(gts):
        gt_rows.setdefault(g.image_id, []).append(k)
    rows = []
    for i, p in enumerate(preds):
        images.setdefault(p.image_id, len(images))
        for k in gt_rows.get(p.image_id, ()):
            v = ious.get((p, gts[k]), 0.0)
            if v > 0:
                rows.append((i, k, v))
    pairs = PairSet.empty() if not rows else PairSet(
        np.array([r[0] for r in rows], np.int64), np.array([r[1] for r in rows], np.int64),
        np.array([r[2] for r in rows], np.float64))
    matched = match_arrays(
        np.array([images[p.image_id] for p in preds], np.int64),
        np.array([p.score for p in preds], np.float64),
        np.array([p.ingest_order for p in preds], np.int64),
        np.array([g.first_pixel for g in gts], np.int64),
        pairs, [threshold])[:, 0]
    outcomes = [
        Outcome(p.score, p.ingest_order, p.image_id, None if m < 0 else gts[m].ingest_order)
        for p, m in zip(preds, matched.tolist())
    ]
    outcomes.sort(key=lambda o: (-o.score, o.ingest_order))
    return MatchResult(threshold, tuple(outcomes), len(gts))


def average_precision(result: MatchResult) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if result.n_gt < 1:
        raise NoGroundTruth("average precision needs at least one GT unit")
    tp = np.array([[o.is_tp] for o in result.outcomes], dtype=bool).reshape(-1, 1)
    score = np.array([o.score for o in result.outcomes], np.float64)
    ingest = np.array([o.ingest_order for o in result.outcomes], np.int64)
    return ap_arrays(score, ingest, tp, result.n_gt)[0]


def _volume(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def report_from_aps(metric: str, thresholds: Sequence[float], class_names: Sequence[str],
                    aps: Mapping[int, Sequence[float]], task: Optional[str] = None,
                    config: Optional[dict] = None) -> ApReport:
    """Assemble an ApReport from per-class, per-threshold AP values.

    ``class_names[i]`` names class ``i + 1``; classes missing from ``aps``
    had no GT and are undefined.
    """
    per_class = {}
    volumes = []
    for class_id, name in enumerate(class_names, start=1):
        values = aps.get(class_id)
        if values is None:
            per_class[name] = ClassAp(None, None)
            continue
        vol = _volume(values)
        per_class[name] = ClassAp(tuple(values), vol)
        volumes.append(vol)
    overall = _volume(volumes) if volumes else None
    cfg = report_config(thresholds, **(config or {}))
    return ApReport(metric, tuple(thresholds), per_class, overall, cfg, task)


def build_report(metric: str, thresholds: Sequence[float], class_names: Sequence[str],
                 results: Mapping[int, Sequence[MatchResult]], task: Optional[str] = None,
                 config: Optional[dict] = None) -> ApReport:
    """Like :func:`report_from_aps`, from pooled MatchResults (one per threshold)."""
    aps = {
        c: [average_precision(r) for r in per_threshold]
        for c, per_threshold in results.items()
        if per_threshold and per_threshold[0].n_gt > 0
    }
    return report_from_aps(metric, thresholds, class_names, aps, task, config)


def _match_all(preds, gts, thresholds, ious, class_ids) -> dict[int, list[MatchResult]]:
    results = {}
    for c in class_ids:
        cp = [p for p in preds if p.class_id == c and p.area > 0]
        cg = [g for g in gts if g.class_id == c]
        if not cg:
            continue
        results[c] = [greedy_match(cp, cg, t, ious) for t in thresholds]
    return results


def ap_r_vol(gt_units: Sequence[EvalUnit], pred_units: Sequence[EvalUnit],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
             class_names: Optional[Sequence[str]] = None) -> ApReport:
    """Region-based AP averaged over thresholds, pooled across images per class."""
    names = class_names if class_names is not None else default_taxonomy().names("attribute")
    ious = pairwise_ious(pred_units, gt_units)
    results = _match_all(pred_units, gt_units, thresholds, ious, range(1, len(names) + 1))
    return build_report("ap_r", thresholds, names, results)


def ap_cr_vol(gt_units: Sequence[EvalUnit], pred_units: Sequence[EvalUnit],
              thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
              class_names: Optional[Sequence[str]] = None, task: Optional[str] = None) -> ApReport:
    """Characterized-region AP: matching looks only at characteristic class and image.

    A predicted unit whose attribute class differs from the GT unit's may
    still be a true positive.
    """
    if class_names is None:
        if task is None:
            raise ValueError("ap_cr_vol needs class_names or a characteristic task")
        class_names = default_taxonomy().names(task)
    ious = pairwise_ious(pred_units, gt_units)
    results = _match_all(pred_units, gt_units, thresholds, ious, range(1, len(class_names) + 1))
    return build_report("ap_cr", thresholds, class_names, results, task=task)


# ---------------------------------------------------------------------------
# part-based person scoring


def mean_part_iou(part_ious: Mapping[int, float], classes: Iterable[int]) -> float:
    """Mean of per-part IoUs over ``classes``; parts missing from the mapping count 0."""
    classes = sorted(set(classes))
    if not classes:
        raise BothEmpty("neither person has a foreground part")
    return math.fsum(part_ious.get(c, 0.0) for c in classes) / len(classes)


def person_match_score(pred_person: EvalUnit, gt_person: EvalUnit) -> float:
    """Mean per-part IoU of two persons, over parts present in either of them."""
    if pred_person.mask.shape != gt_person.mask.shape:
        raise DimensionMismatch("persons come from rasters of different shapes")
    gm, pm = gt_person.mask.bits, pred_person.mask.bits
    g_parts = np.where(gm, gt_person.parts.data, 0)
    p_parts = np.where(pm, pred_person.parts.data, 0)
    g_classes = set(np.unique(g_parts).tolist()) - {0}
    p_classes = set(np.unique(p_parts).tolist()) - {0}
    part_ious = {}
    for c in g_classes & p_classes:
        a, b = g_parts == c, p_parts == c
        inter = int(np.count_nonzero(a & b))
        if inter:
            part_ious[c] = inter / int(np.count_nonzero(a | b))
    return mean_part_iou(part_ious, g_classes | p_classes)


def person_scores_from_regions(gt_persons: Sequence[EvalUnit], pred_persons: Sequence[EvalUnit],
                               gt_regions: Sequence[EvalUnit], pred_regions: Sequence[EvalUnit],
                               region_ious: Mapping) -> dict:
    """Person match scores for one image, derived from region-unit IoUs.

    Equivalent to :func:`person_match_score` on every pair, but linear in
    pixels. Pairs without a shared part are left out (score 0).
    """
    g_classes: dict = {}
    for r in gt_regions:
        g_classes.setdefault(r.instance_id, set()).add(r.class_id)
    p_classes: dict = {}
    for r in pred_regions:
        p_classes.setdefault(r.instance_id, set()).add(r.class_id)
    shared: dict = {}
    for (p, g), v in region_ious.items():
        if p.instance_id and g.instance_id:
            shared.setdefault((p.instance_id, g.instance_id), {})[p.class_id] = v
    gt_by_id = {g.instance_id: g for g in gt_persons}
    pred_by_id = {p.instance_id: p for p in pred_persons}
    scores = {}
    for (pi, gi), part_ious in shared.items():
        if pi not in pred_by_id or gi not in gt_by_id:
            continue
        classes = g_classes.get(gi, set()) | p_classes.get(pi, set())
        scores[(pred_by_id[pi], gt_by_id[gi])] = mean_part_iou(part_ious, classes)
    return scores


def ap_p_vol(gt_persons: Sequence[EvalUnit], pred_persons: Sequence[EvalUnit],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> ApReport:
    """Part-based AP over persons, matched by :func:`person_match_score`."""
    by_image: dict = {}
    for g in gt_persons:
        by_image.setdefault(g.image_id, []).append(g)
    scores = {}
    for p in pred_persons:
        for g in by_image.get(p.image_id, ()):
            try:
                s = person_match_score(p, g)
            except BothEmpty:
                s = 0.0
            if s:
                scores[(p, g)] = s
    results = _match_all(pred_persons, gt_persons, thresholds, scores, [0])
    return build_report("ap_p", thresholds, ["person"], {1: results[0]} if 0 in results else {})
