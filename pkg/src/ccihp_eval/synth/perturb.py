"""Reproducible degradations of a prediction: erosion, drops, relabels, score noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..maskcore import CHARACTERISTIC_TASKS, SEMANTIC_TASKS, BinaryMask, LabelMap, rle_decode, rle_encode
from ..samples import PredInstance, Prediction
from ..taxonomy import Taxonomy, default_taxonomy
from .generator import make_rng


@dataclass(frozen=True)
class PerturbationSpec:
    mask_erosion: int = 0
    score_noise: float = 0.0
    drop_instance_prob: float = 0.0
    relabel_prob: dict = field(default_factory=dict)  # task -> probability
    seed: int = 0

    def __post_init__(self):
        if self.mask_erosion < 0:
            raise ValueError("mask_erosion must be >= 0")
        if self.score_noise < 0:
            raise ValueError("score_noise must be >= 0")
        probs = [self.drop_instance_prob, *self.relabel_prob.values()]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        bad = set(self.relabel_prob) - set(SEMANTIC_TASKS)
        if bad:
            raise ValueError(f"unknown relabel tasks {sorted(bad)}")


def _instance_map(pred: Prediction) -> np.ndarray:
    inst = np.zeros((pred.height, pred.width), dtype=np.int32)
    order = sorted(range(len(pred.instances)), key=lambda k: (pred.instances[k].score, -k))
    for k in order:
        inst[rle_decode(pred.instances[k].mask).bits] = k + 1
    return inst


def erode_regions(keys: np.ndarray, radius: int) -> np.ndarray:
    """Pixels whose whole (2r+1)^2 neighbourhood, inside the image, shares their key."""
    if radius == 0:
        return np.ones(keys.shape, dtype=bool)
    h, w = keys.shape
    padded = np.full((h + 2 * radius, w + 2 * radius), -1, dtype=np.int64)
    padded[radius:radius + h, radius:radius + w] = keys
    keep = np.ones(keys.shape, dtype=bool)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            keep &= padded[dy:dy + h, dx:dx + w] == keys
    return keep


def perturb(pred: Prediction, spec: PerturbationSpec, taxonomy: Taxonomy | None = None):
    """Return ``(degraded prediction, record of what was applied)``.

    Erosion shrinks every (instance, attribute) part region and every
    instance mask by ``mask_erosion`` pixels; relabels act per part region.
    """
    tax = taxonomy or default_taxonomy()
    rng = make_rng(spec.seed)
    inst = _instance_map(pred)
    semantic = {t: np.array(pred.semantic_map(t).data, dtype=np.int64) for t in SEMANTIC_TASKS}
    record: dict = {"mask_erosion": spec.mask_erosion, "dropped": [], "relabeled": {},
                    "score_noise": spec.score_noise, "seed": spec.seed}

    if spec.mask_erosion:
        n_attr = tax.num_classes("attribute")
        keys = inst.astype(np.int64) * n_attr + semantic["attribute"]
        lost = ~erode_regions(keys, spec.mask_erosion) & (semantic["attribute"] > 0)
        for t in SEMANTIC_TASKS:
            semantic[t][lost] = 0
        inst_keep = erode_regions(inst.astype(np.int64), spec.mask_erosion)
        inst = np.where(inst_keep, inst, 0)

    n_attr = tax.num_classes("attribute")
    for task in SEMANTIC_TASKS:
        p = spec.relabel_prob.get(task, 0.0)
        if not p:
            continue
        keys = inst.astype(np.int64) * n_attr + semantic["attribute"]
        region_keys = np.unique(keys[(inst > 0) & (semantic["attribute"] > 0)])
        changes = []
        for key in region_keys.tolist():
            if rng.random() >= p:
                continue
            region = keys == key
            target = semantic[task]
            old = int(target[region].max())
            if task in CHARACTERISTIC_TASKS and old == 0:
                continue
            options = [c for c in range(1, tax.num_classes(task)) if c != old]
            new = options[int(rng.integers(len(options)))]
            if task == "attribute":
                target[region] = new
            else:
                target[region & (target > 0)] = new
            changes.append([key // n_attr, key % n_attr, old, new])
        record["relabeled"][task] = changes

    instances = []
    for k, pi in enumerate(pred.instances):
        if spec.drop_instance_prob and rng.random() < spec.drop_instance_prob:
            record["dropped"].append(k)
            continue
        score = pi.score
        if spec.score_noise:
            score = float(np.clip(score + rng.normal(0.0, spec.score_noise), 0.0, 1.0))
        mask = pi.mask
        if spec.mask_erosion:
            mask = rle_encode(BinaryMask(inst == k + 1))
        instances.append(PredInstance(score, mask))

    semantic_maps = {t: LabelMap(t, semantic[t].astype(np.uint8)) for t in SEMANTIC_TASKS}
    return Prediction(pred.image_id, pred.height, pred.width, tuple(instances), semantic_maps), record
