"""Brute-force reference evaluator.

Deliberately naive and self-contained: pixels are walked one by one in plain
Python, units are pixel-index sets, every GT candidate is rescanned for each
prediction and the PR table is built row by row. It shares no matching,
integration or extraction code with the main engine, only the input types.

Conventions it must agree on with the engine (they only matter for ties):
predictions rank by score descending, then by ingestion order (images by
ascending id, then unit key); among equally good GT candidates the one whose
first row-major pixel comes first wins; overlapping predicted instances give
a pixel to the highest score, then to the earliest listed.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

from ..samples import ImageSample, Prediction
from ..taxonomy import Taxonomy

TASK_ORDER = ("attribute", "size", "pattern", "color")
CHAR_TASKS = ("size", "pattern", "color")
DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def _decode_runs(size, counts) -> list:
    h, w = size
    pixels = []
    pos = 0
    fg = False
    for c in counts:
        if fg:
            for i in range(pos, pos + c):
                pixels.append(i)
        pos += c
        fg = not fg
    if pos != h * w:
        raise ValueError("run lengths do not cover the raster")
    return pixels


def _pred_instance_list(pred: Prediction) -> list:
    n = pred.height * pred.width
    owner = [0] * n
    best = [None] * n
    for k, inst in enumerate(pred.instances):
        for i in _decode_runs(inst.mask.size, inst.mask.counts):
            # strictly greater keeps the earlier entry on equal scores
            if best[i] is None or inst.score > best[i]:
                best[i] = inst.score
                owner[i] = k + 1
    return owner


def _flat(label_map) -> list:
    return [v for row in label_map.data.tolist() for v in row]


def _units(inst: list, keys: Sequence[list], keep) -> dict:
    """Key tuple -> set of pixel indices, for pixels where ``keep`` holds."""
    units: dict = {}
    for i in range(len(inst)):
        if inst[i] == 0:
            continue
        key = (inst[i], *(k[i] for k in keys))
        if not keep(key):
            continue
        units.setdefault(key, set()).add(i)
    return units


def _iou(a: set, b: set) -> float:
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / len(a | b)


def _ap(rows: list, n_gt: int) -> float:
    """rows: is_tp flags in ranked order."""
    table = []
    tp = fp = 0
    for is_tp in rows:
        tp += is_tp
        fp += not is_tp
        table.append((tp / (tp + fp), tp / n_gt))
    # each recall step is exactly one TP, i.e. a width of 1/n_gt; summing the
    # step heights exactly and dividing once keeps the value bit-reproducible
    heights = []
    prev_recall = 0.0
    for _, recall in table:
        if recall > prev_recall:
            heights.append(max(p for p, r in table if r >= recall))
            prev_recall = recall
    return math.fsum(heights) / n_gt


def _match(preds: list, gts: list, threshold: float, score_fn) -> list:
    """preds: (score, ingest, image, unit); gts: (image, first_pixel, unit)."""
    taken = set()
    flags = []
    for score, ingest, image, pu in sorted(preds, key=lambda p: (-p[0], p[1])):
        best_iou, best_key = 0.0, None
        for g_index, (g_image, first, gu) in enumerate(gts):
            if g_image != image or g_index in taken:
                continue
            v = score_fn(pu, gu)
            if v > best_iou or (v == best_iou and v > 0 and first < best_key[0]):
                best_iou, best_key = v, (first, g_index)
        if best_key is not None and best_iou >= threshold:
            taken.add(best_key[1])
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _ap_block(names, preds_by_class, gts_by_class, thresholds, score_fn):
    per_class = {}
    volumes = []
    for c, name in enumerate(names, start=1):
        gts = gts_by_class.get(c, [])
        if not gts:
            per_class[name] = {"per_threshold": None, "volume": None}
            continue
        preds = preds_by_class.get(c, [])
        aps = [_ap(_match(preds, gts, t, score_fn), len(gts)) for t in thresholds]
        vol = math.fsum(aps) / len(aps)
        volumes.append(vol)
        per_class[name] = {"per_threshold": aps, "volume": vol}
    overall = math.fsum(volumes) / len(volumes) if volumes else None
    return {"per_class": per_class, "overall": overall}


def _person_score(pred_parts: dict, gt_parts: dict) -> float:
    classes = set(pred_parts) | set(gt_parts)
    if not classes:
        return 0.0
    ious = [_iou(pred_parts.get(c, set()), gt_parts.get(c, set())) for c in sorted(classes)]
    return math.fsum(ious) / len(classes)


def naive_eval(samples: Sequence[ImageSample], predictions: dict, taxonomy: Taxonomy,
               thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
               tasks: Sequence[str] = TASK_ORDER,
               metrics: Sequence[str] = ("miou", "ap_r", "ap_p", "ap_cr"),
               granularity: str = "per_attribute_region") -> dict:
    """Every metric the engine reports, recomputed the slow way."""
    char_tasks = [t for t in tasks if t in CHAR_TASKS]
    eligible = set(taxonomy.characterizable)
    n_classes = {t: len(taxonomy.names(t)) + 1 for t in TASK_ORDER}
    confusion = {t: [[0] * n_classes[t] for _ in range(n_classes[t])] for t in tasks}

    region_preds: dict = {}
    region_gts: dict = {}
    person_preds: list = []
    person_gts: list = []
    char_preds = {t: {} for t in char_tasks}
    char_gts = {t: {} for t in char_tasks}
    counter = {"r": 0, "p": 0, **{t: 0 for t in char_tasks}}
    missing = []

    for sample in sorted(samples, key=lambda s: s.image_id):
        image = sample.image_id
        pred: Optional[Prediction] = predictions.get(image)
        h, w = sample["instance"].shape
        n = h * w
        if pred is None:
            missing.append(image)
            pred_inst = [0] * n
            pred_sem = {t: [0] * n for t in TASK_ORDER}
            scores = {}
        else:
            pred_inst = _pred_instance_list(pred)
            pred_sem = {}
            for t in TASK_ORDER:
                pred_sem[t] = _flat(pred.semantic[t]) if t in pred.semantic else [0] * n
            scores = {k + 1: inst.score for k, inst in enumerate(pred.instances)}
        gt_inst = _flat(sample["instance"])
        gt_sem = {t: _flat(sample[t]) for t in TASK_ORDER}

        if "miou" in metrics:
            for t in tasks:
                cm = confusion[t]
                g, p = gt_sem[t], pred_sem[t]
                for i in range(n):
                    cm[g[i]][p[i]] += 1

        g_regions = _units(gt_inst, [gt_sem["attribute"]], lambda k: k[1] > 0)
        p_regions = _units(pred_inst, [pred_sem["attribute"]], lambda k: k[1] > 0)

        if "ap_r" in metrics:
            for key in sorted(g_regions):
                pix = g_regions[key]
                region_gts.setdefault(key[1], []).append((image, min(pix), pix))
            for key in sorted(p_regions):
                region_preds.setdefault(key[1], []).append(
                    (scores[key[0]], counter["r"], image, p_regions[key]))
                counter["r"] += 1

        if "ap_p" in metrics:
            g_persons = _units(gt_inst, [], lambda k: True)
            p_persons = _units(pred_inst, [], lambda k: True)
            for key in sorted(g_persons):
                parts = {a: pix for (i, a), pix in g_regions.items() if i == key[0]}
                person_gts.append((image, min(g_persons[key]), parts))
            for key in sorted(p_persons):
                parts = {a: pix for (i, a), pix in p_regions.items() if i == key[0]}
                person_preds.append((scores[key[0]], counter["p"], image, parts))
                counter["p"] += 1

        if "ap_cr" in metrics:
            for t in char_tasks:
                if granularity == "per_attribute_region":
                    keys_g, keys_p = [gt_sem["attribute"], gt_sem[t]], [pred_sem["attribute"], pred_sem[t]]
                    ok = lambda k: k[1] in eligible and k[2] > 0  # noqa: E731
                else:
                    keys_g = [gt_sem[t], gt_sem["attribute"]]
                    keys_p = [pred_sem[t], pred_sem["attribute"]]
                    ok = lambda k: k[2] in eligible and k[1] > 0  # noqa: E731
                g_units = _units(gt_inst, keys_g, ok)
                p_units = _units(pred_inst, keys_p, ok)
                if granularity == "per_instance":
                    g_units = _drop_attribute(g_units)
                    p_units = _drop_attribute(p_units)
                for key in sorted(g_units):
                    pix = g_units[key]
                    char_gts[t].setdefault(key[-1], []).append((image, min(pix), pix))
                for key in sorted(p_units):
                    char_preds[t].setdefault(key[-1], []).append(
                        (scores[key[0]], counter[t], image, p_units[key]))
                    counter[t] += 1

    report: dict = {}
    if "miou" in metrics:
        report["miou"] = {}
        for t in tasks:
            report["miou"][t] = _miou_entry(t, confusion[t], ["background", *taxonomy.names(t)])
    if "ap_r" in metrics:
        report["ap_r"] = _ap_block(taxonomy.names("attribute"), region_preds, region_gts,
                                   thresholds, _iou)
    if "ap_p" in metrics:
        report["ap_p"] = _ap_block(["person"], {1: person_preds}, {1: person_gts} if person_gts else {},
                                   thresholds, _person_score)
    if "ap_cr" in metrics and char_tasks:
        report["ap_cr"] = {
            t: _ap_block(taxonomy.names(t), char_preds[t], char_gts[t], thresholds, _iou)
            for t in char_tasks
        }
    report["metadata"] = {"images": len(samples), "missing_predictions": missing}
    return report


def _drop_attribute(units: dict) -> dict:
    """Merge (instance, char, attribute) keys into (instance, char)."""
    merged: dict = {}
    for (inst, char, _attr), pix in units.items():
        merged.setdefault((inst, char), set()).update(pix)
    return merged


def _miou_entry(task: str, cm: list, names: list) -> dict:
    n = len(cm)
    per_class = {}
    values = []
    for c in range(n):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(n)) - tp
        fn = sum(cm[c]) - tp
        union = tp + fp + fn
        v = tp / union if union else None
        per_class[names[c]] = v
        values.append(v)
    fg = [v for v in values[1:] if v is not None]
    allv = [v for v in values if v is not None]
    return {
        "task": task,
        "per_class": per_class,
        "mean_foreground": math.fsum(fg) / len(fg) if fg else None,
        "mean_with_background": math.fsum(allv) / len(allv) if allv else None,
    }


def compare_reports(main: dict, naive: dict, tol: float = 1e-9, path: str = "") -> list[str]:
    """Paths where two reports disagree; the main report's config blocks are ignored."""
    problems = []
    if isinstance(naive, dict):
        if not isinstance(main, dict):
            return [f"{path}: type differs"]
        for key, value in naive.items():
            if key not in main:
                problems.append(f"{path}/{key}: missing from main report")
                continue
            problems += compare_reports(main[key], value, tol, f"{path}/{key}")
        return problems
    if isinstance(naive, (list, tuple)):
        if not isinstance(main, (list, tuple)) or len(main) != len(naive):
            return [f"{path}: length differs"]
        for i, (a, b) in enumerate(zip(main, naive)):
            problems += compare_reports(a, b, tol, f"{path}[{i}]")
        return problems
    if naive is None or main is None:
        return [] if naive is main else [f"{path}: {main!r} vs {naive!r}"]
    if isinstance(naive, str):
        return [] if naive == main else [f"{path}: {main!r} vs {naive!r}"]
    if abs(main - naive) > tol:
        return [f"{path}: {main!r} vs {naive!r}"]
    return []
