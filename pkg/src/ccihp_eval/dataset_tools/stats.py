"""Dataset statistics: images per label, people per image, pixels per class."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..maskcore import SEMANTIC_TASKS, TASKS
from ..parallel import ordered_map
from ..samples import ImageSample
from ..taxonomy import Taxonomy
from .io import DatasetManifest, ManifestEntry, RasterError, read_label_raster


@dataclass
class StatsReport:
    """Integer counters only, so shards merge exactly in any order."""

    images: int = 0
    images_per_split: Counter = field(default_factory=Counter)
    # task -> class id -> images containing at least one pixel of the class
    images_per_label: dict[str, Counter] = field(
        default_factory=lambda: {t: Counter() for t in SEMANTIC_TASKS})
    pixels_per_class: dict[str, Counter] = field(
        default_factory=lambda: {t: Counter() for t in SEMANTIC_TASKS})
    instances_total: int = 0
    people_per_image: Counter = field(default_factory=Counter)
    errors: list[dict] = field(default_factory=list)

    @property
    def mean_people_per_image(self) -> Optional[float]:
        if not self.images:
            return None
        return self.instances_total / self.images

    def merge(self, other: "StatsReport") -> "StatsReport":
        return StatsReport(
            images=self.images + other.images,
            images_per_split=self.images_per_split + other.images_per_split,
            images_per_label={t: self.images_per_label[t] + other.images_per_label[t]
                              for t in SEMANTIC_TASKS},
            pixels_per_class={t: self.pixels_per_class[t] + other.pixels_per_class[t]
                              for t in SEMANTIC_TASKS},
            instances_total=self.instances_total + other.instances_total,
            people_per_image=self.people_per_image + other.people_per_image,
            errors=sorted(self.errors + other.errors, key=lambda e: (e["image_id"], e["detail"])),
        )

    def to_json(self, taxonomy: Taxonomy) -> dict:
        def named(task, counter):
            return {taxonomy.class_name(task, c): int(counter.get(c, 0))
                    for c in range(1, taxonomy.num_classes(task))}

        return {
            "images": self.images,
            "images_per_split": {s: int(n) for s, n in sorted(self.images_per_split.items())},
            "images_per_label": {t: named(t, self.images_per_label[t]) for t in SEMANTIC_TASKS},
            "pixels_per_class": {t: named(t, self.pixels_per_class[t]) for t in SEMANTIC_TASKS},
            "instances_total": self.instances_total,
            "people_per_image": {
                "histogram": {str(k): int(v) for k, v in sorted(self.people_per_image.items())},
                "mean": self.mean_people_per_image,
            },
            "errors": list(self.errors),
        }


def sample_stats(sample: ImageSample) -> StatsReport:
    report = StatsReport(images=1, images_per_split=Counter({sample.split: 1}))
    for task in SEMANTIC_TASKS:
        counts = np.bincount(sample[task].data.ravel().astype(np.int64))
        for c in np.flatnonzero(counts).tolist():
            if c == 0:
                continue
            report.images_per_label[task][c] += 1
            report.pixels_per_class[task][c] += int(counts[c])
    ids = np.unique(sample["instance"].data)
    people = int(np.count_nonzero(ids))
    report.instances_total = people
    report.people_per_image[people] += 1
    return report


def merge_all(reports: Iterable[StatsReport]) -> StatsReport:
    total = StatsReport()
    for r in reports:
        total = total.merge(r)
    return total


def _scan_entry(args) -> StatsReport:
    manifest, entry = args
    maps, errors = {}, []
    for task in TASKS:
        try:
            maps[task] = read_label_raster(manifest.path(entry, task), task)
        except RasterError as exc:
            errors.append({"image_id": entry.image_id, "code": "IoError", "detail": str(exc)})
    if errors:
        return StatsReport(errors=errors)
    return sample_stats(ImageSample(entry.image_id, maps, entry.split))


def scan_stats(manifest: DatasetManifest, workers: int = 1) -> StatsReport:
    """Scan every manifest image; unreadable rasters are listed, not fatal."""
    entries: list[ManifestEntry] = sorted(manifest.entries, key=lambda e: e.image_id)
    return merge_all(ordered_map(_scan_entry, [(manifest, e) for e in entries], workers))


def scan_samples(samples: Iterable[ImageSample]) -> StatsReport:
    return merge_all(sample_stats(s) for s in sorted(samples, key=lambda s: s.image_id))

