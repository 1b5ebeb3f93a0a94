"""Schema checks for one annotated image.

Codes:
  V1  characteristic pixels outside characterizable attributes      (warning)
  V2  Sparse/bald size outside Hair                                   (error)
  V3  attribute pixels outside every human instance                   (warning)
  V4  instance ids not contiguous 1..P                                (error)
  V5  rasters of one image disagree on dimensions                     (error)
  V6  class id outside the task catalog                               (error)

Warnings are suppressed while the offending pixels stay within
``tolerance`` (a fraction) of the region they are measured against.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..maskcore import CHARACTERISTIC_TASKS, SEMANTIC_TASKS, TASKS
from ..parallel import ordered_map
from ..samples import ImageSample
from ..taxonomy import Taxonomy
from .io import DatasetManifest, RasterError, read_label_raster

DEFAULT_TOLERANCE = 0.001


@dataclass(frozen=True)
class Violation:
    code: str
    severity: str
    detail: str
    pixels: Optional[int] = None
    task: Optional[str] = None

    def to_json(self) -> dict:
        return {"code": self.code, "severity": self.severity, "detail": self.detail,
                "pixels": self.pixels, "task": self.task}


@dataclass
class ValidationReport:
    """Violations keyed by image id; images that pass are absent."""

    images: dict[str, list[Violation]] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.images

    def violations(self) -> list[Violation]:
        return [v for image_id in sorted(self.images) for v in self.images[image_id]]

    @property
    def has_errors(self) -> bool:
        return any(v.severity == "error" for v in self.violations())

    def codes(self) -> set[str]:
        return {v.code for v in self.violations()}

    def merge(self, other: "ValidationReport") -> "ValidationReport":
        merged = dict(self.images)
        for image_id, vs in other.images.items():
            merged[image_id] = merged.get(image_id, []) + list(vs)
        return ValidationReport(dict(sorted(merged.items())))

    def to_json(self) -> dict:
        return {
            "images": {k: [v.to_json() for v in vs] for k, vs in sorted(self.images.items())},
            "errors": sum(v.severity == "error" for v in self.violations()),
            "warnings": sum(v.severity == "warning" for v in self.violations()),
        }


def _soft(code, task, bad: int, region: int, detail: str, tolerance: float) -> list[Violation]:
    if bad and bad > tolerance * region:
        return [Violation(code, "warning", detail, bad, task)]
    return []


def check_sample(sample: ImageSample, taxonomy: Taxonomy,
                 tolerance: float = DEFAULT_TOLERANCE) -> list[Violation]:
    maps = sample.maps
    shapes = {t: maps[t].shape for t in TASKS}
    if len(set(shapes.values())) > 1:
        detail = ", ".join(f"{t}={h}x{w}" for t, (h, w) in shapes.items())
        return [Violation("V5", "error", f"dimension mismatch: {detail}")]

    out: list[Violation] = []
    for task in SEMANTIC_TASKS:
        data = maps[task].data
        bad = int(np.count_nonzero(data >= taxonomy.num_classes(task)))
        if bad:
            out.append(Violation("V6", "error",
                                 f"{task} ids above {taxonomy.num_classes(task) - 1}", bad, task))

    inst = maps["instance"].data
    ids = set(np.unique(inst).tolist()) - {0}
    if ids:
        missing = sorted(set(range(1, max(ids) + 1)) - ids)
        if missing:
            out.append(Violation("V4", "error", f"instance ids missing: {missing}", None, "instance"))

    attr = maps["attribute"].data
    size = maps["size"].data
    sparse_bad = int(np.count_nonzero((size == taxonomy.sparse_index) & (attr != taxonomy.hair_index)))
    if sparse_bad:
        out.append(Violation("V2", "error", "Sparse/bald size outside Hair", sparse_bad, "size"))

    eligible = np.isin(attr, np.array(taxonomy.characterizable_ids()))
    for task in CHARACTERISTIC_TASKS:
        char = maps[task].data > 0
        bad = int(np.count_nonzero(char & ~eligible))
        out += _soft("V1", task, bad, int(np.count_nonzero(char)),
                     f"{task} pixels outside characterizable attributes", tolerance)

    attr_fg = attr > 0
    bad = int(np.count_nonzero(attr_fg & (inst == 0)))
    out += _soft("V3", "attribute", bad, int(np.count_nonzero(attr_fg)),
                 "attribute pixels outside human instances", tolerance)
    return out


def validate_sample(sample: ImageSample, taxonomy: Taxonomy,
                    tolerance: float = DEFAULT_TOLERANCE) -> ValidationReport:
    found = check_sample(sample, taxonomy, tolerance)
    return ValidationReport({sample.image_id: found} if found else {})


def _validate_entry(args) -> ValidationReport:
    manifest, entry, taxonomy, tolerance = args
    maps, problems = {}, []
    for task in TASKS:
        try:
            maps[task] = read_label_raster(manifest.path(entry, task), task)
        except RasterError as exc:
            problems.append(Violation("IO", "error", str(exc), None, task))
    if problems:
        return ValidationReport({entry.image_id: problems})
    return validate_sample(ImageSample(entry.image_id, maps, entry.split), taxonomy, tolerance)


def validate_manifest(manifest: DatasetManifest, taxonomy: Taxonomy, workers: int = 1,
                      tolerance: float = DEFAULT_TOLERANCE) -> ValidationReport:
    entries = sorted(manifest.entries, key=lambda e: e.image_id)
    jobs = [(manifest, e, taxonomy, tolerance) for e in entries]
    return merge_reports(ordered_map(_validate_entry, jobs, workers))


def merge_reports(reports: Iterable[ValidationReport]) -> ValidationReport:
    total = ValidationReport()
    for r in reports:
        total = total.merge(r)
    return total
