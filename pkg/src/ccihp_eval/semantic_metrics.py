"""Pixel-wise semantic metrics: confusion matrices, per-class IoU, mIoU and Dice."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .maskcore import ClassOutOfRange, DimensionMismatch, LabelMap

MEAN_POLICIES = ("foreground_only", "with_background")


class ShapeMismatch(ValueError):
    pass


class AllUndefined(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[g, p]`` = pixels with ground-truth class g predicted as p."""

    task: str
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeMismatch(f"confusion counts must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("negative confusion count")
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zero(cls, task: str, n: int) -> "ConfusionMatrix":
        return cls(task, np.zeros((n, n), dtype=np.int64))

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.task == other.task and np.array_equal(self.counts, other.counts)

    __hash__ = None

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return merge(self, other)


def accumulate(gt: LabelMap, pred: LabelMap, n: int) -> ConfusionMatrix:
    if gt.shape != pred.shape:
        raise DimensionMismatch(f"gt {gt.shape} vs pred {pred.shape}")
    if gt.task != pred.task:
        raise DimensionMismatch(f"gt task {gt.task} vs pred task {pred.task}")
    g = gt.data.ravel().astype(np.int64)
    p = pred.data.ravel().astype(np.int64)
    for name, arr in (("gt", g), ("pred", p)):
        if arr.size and arr.max() >= n:
            raise ClassOutOfRange(f"{name} {gt.task} map holds class {int(arr.max())} >= {n}")
    counts = np.bincount(g * n + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(gt.task, counts)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.task != b.task or a.n != b.n:
        raise ShapeMismatch(f"cannot merge {a.task}/{a.n} with {b.task}/{b.n}")
    return ConfusionMatrix(a.task, a.counts + b.counts)


def _tp_fp_fn(cm: ConfusionMatrix):
    tp = np.diag(cm.counts)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    return tp.tolist(), fp.tolist(), fn.tolist()


def iou_per_class(cm: ConfusionMatrix) -> list[Optional[float]]:
    """Per-class IoU; ``None`` marks classes absent from both GT and prediction."""
    out = []
    for tp, fp, fn in zip(*_tp_fp_fn(cm)):
        union = tp + fp + fn
        out.append(tp / union if union else None)
    return out


def dice_per_class(cm: ConfusionMatrix) -> list[Optional[float]]:
    out = []
    for tp, fp, fn in zip(*_tp_fp_fn(cm)):
        denom = 2 * tp + fp + fn
        out.append(2 * tp / denom if denom else None)
    return out


def mean_iou(cm: ConfusionMatrix, policy: str = "foreground_only") -> tuple[float, list[Optional[float]]]:
    if policy not in MEAN_POLICIES:
        raise ValueError(f"unknown mean policy {policy!r}")
    per_class = iou_per_class(cm)
    start = 1 if policy == "foreground_only" else 0
    defined = [v for v in per_class[start:] if v is not None]
    if not defined:
        raise AllUndefined(f"no {cm.task} class has a positive union")
    return math.fsum(defined) / len(defined), per_class


def report_entry(cm: ConfusionMatrix, class_names) -> dict:
    """JSON report entry for one task; ``class_names`` are the foreground names."""
    per_class = iou_per_class(cm)
    names = ["background", *class_names]
    if len(names) != cm.n:
        raise ShapeMismatch(f"{len(names)} names for a {cm.n}-class matrix")
    entry = {"task": cm.task, "per_class": dict(zip(names, per_class))}
    for policy, key in (("foreground_only", "mean_foreground"), ("with_background", "mean_with_background")):
        try:
            entry[key] = mean_iou(cm, policy)[0]
        except AllUndefined:
            entry[key] = None
    return entry
