"""In-memory ground-truth samples and prediction records."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .maskcore import SEMANTIC_TASKS, BinaryMask, LabelMap, RleMask, rle_encode

SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class ImageSample:
    """Ground truth of one image: the four semantic rasters plus the instance map."""

    image_id: str
    maps: dict[str, LabelMap]
    split: str = "train"

    def __getitem__(self, task: str) -> LabelMap:
        return self.maps[task]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps["instance"].shape


@dataclass(frozen=True)
class PredInstance:
    score: float
    mask: RleMask


@dataclass(frozen=True, eq=False)
class Prediction:
    """Model output for one image: scored instance masks plus semantic maps.

    Overlapping instance masks are resolved at evaluation time: a pixel goes
    to the highest-scoring instance, ties to the one listed first.
    """

    image_id: str
    height: int
    width: int
    instances: tuple[PredInstance, ...] = ()
    semantic: dict[str, LabelMap] = field(default_factory=dict)

    def semantic_map(self, task: str) -> LabelMap:
        m = self.semantic.get(task)
        return m if m is not None else LabelMap.zeros(task, self.height, self.width)

    @classmethod
    def empty(cls, image_id: str, height: int, width: int) -> "Prediction":
        return cls(image_id, height, width)


def prediction_from_sample(sample: ImageSample, score: float = 1.0,
                           scores: Optional[dict[int, float]] = None) -> Prediction:
    """Ground truth repackaged as a prediction (the perfect-prediction fixture)."""
    inst = sample["instance"].data
    h, w = inst.shape
    ids = [i for i in np.unique(inst).tolist() if i]
    instances = tuple(
        PredInstance(scores[i] if scores else score, rle_encode(BinaryMask(inst == i)))
        for i in ids
    )
    return Prediction(sample.image_id, h, w, instances,
                      {t: sample[t] for t in SEMANTIC_TASKS})
