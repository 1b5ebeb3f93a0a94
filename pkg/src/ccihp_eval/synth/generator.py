"""Deterministic synthetic scenes: persons as rectangles cut into part bands.

Every draw comes from ``numpy.random.Generator(PCG64(SeedSequence(seed)))``;
dataset image ``i`` of base seed ``s`` uses the entropy ``[s, i]``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..maskcore import SEMANTIC_TASKS, LabelMap
from ..samples import ImageSample, Prediction, prediction_from_sample
from ..taxonomy import Taxonomy, default_taxonomy

RNG_NAME = "numpy.random.PCG64"
SEEDING_RULE = "PCG64(SeedSequence(seed)); dataset image i uses SeedSequence([seed, i])"

Seed = Union[int, Sequence[int]]


class SpecInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    persons: tuple[int, int] = (0, 5)
    parts_per_person: tuple[int, int] = (1, 6)
    characterizable_fraction: float = 0.7
    # task -> allowed foreground class ids; None means the whole catalog
    pools: Optional[dict] = None

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("scene dimensions must be at least 8")
        lo, hi = self.persons
        if lo < 0 or hi < lo:
            raise ValueError(f"bad person range {self.persons}")
        lo, hi = self.parts_per_person
        if lo < 0 or hi < lo:
            raise ValueError(f"bad parts range {self.parts_per_person}")
        if not 0.0 <= self.characterizable_fraction <= 1.0:
            raise ValueError("characterizable_fraction must be in [0, 1]")

    def pool(self, task: str, taxonomy: Taxonomy) -> tuple[int, ...]:
        if self.pools and task in self.pools:
            return tuple(sorted(self.pools[task]))
        return tuple(range(1, taxonomy.num_classes(task)))


@dataclass
class SceneTruth:
    """What the generator put in the scene, for checking statistics exactly."""

    image_id: str
    split: str
    persons: int
    # task -> class id -> pixel count (foreground classes only)
    pixels: dict = field(default_factory=dict)
    # per person: list of (attribute, size, pattern, color, rows, cols)
    parts: list = field(default_factory=list)

    def labels_present(self, task: str) -> set:
        return {c for c, n in self.pixels.get(task, {}).items() if n}

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "split": self.split,
            "persons": self.persons,
            "pixels": {t: {str(c): n for c, n in sorted(v.items())} for t, v in self.pixels.items()},
            "parts": self.parts,
        }


def make_rng(seed: Seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _check_feasible(spec: SceneSpec, taxonomy: Taxonomy) -> None:
    max_persons = spec.persons[1]
    if max_persons and spec.width // max_persons < 3:
        raise SpecInfeasible(f"{max_persons} persons do not fit in width {spec.width}")
    max_parts = spec.parts_per_person[1]
    if 2 * max_parts > spec.height:
        raise SpecInfeasible(f"{max_parts} parts of 2 rows do not fit in height {spec.height}")
    if len(spec.pool("attribute", taxonomy)) < max_parts:
        raise SpecInfeasible("attribute pool smaller than the part count")
    for task in ("pattern", "color"):
        if not spec.pool(task, taxonomy):
            raise SpecInfeasible(f"empty {task} pool")
    sizes = [s for s in spec.pool("size", taxonomy) if s != taxonomy.sparse_index]
    if not sizes:
        raise SpecInfeasible("no size class usable outside Hair")


def _pick_attributes(rng, k: int, spec: SceneSpec, taxonomy: Taxonomy) -> list[int]:
    pool = spec.pool("attribute", taxonomy)
    char_pool = [a for a in pool if a in taxonomy.characterizable]
    plain_pool = [a for a in pool if a not in taxonomy.characterizable]
    chosen: list[int] = []
    for _ in range(k):
        want_char = rng.random() < spec.characterizable_fraction
        first, second = (char_pool, plain_pool) if want_char else (plain_pool, char_pool)
        options = [a for a in first if a not in chosen] or [a for a in second if a not in chosen]
        chosen.append(int(options[rng.integers(len(options))]))
    return chosen


def generate_scene(seed: Seed, spec: SceneSpec = SceneSpec(), taxonomy: Optional[Taxonomy] = None,
                   image_id: Optional[str] = None, split: str = "train"):
    """Return ``(ground truth sample, perfect prediction, declared truth)``."""
    tax = taxonomy or default_taxonomy()
    _check_feasible(spec, tax)
    rng = make_rng(seed)
    if image_id is None:
        image_id = f"synth_{seed}" if isinstance(seed, int) else "synth_" + "_".join(map(str, seed))
    h, w = spec.height, spec.width
    maps = {t: np.zeros((h, w), dtype=np.uint8) for t in SEMANTIC_TASKS}
    inst = np.zeros((h, w), dtype=np.uint16)
    n = int(rng.integers(spec.persons[0], spec.persons[1] + 1))
    size_pool = spec.pool("size", tax)
    size_plain = [s for s in size_pool if s != tax.sparse_index]
    pattern_pool = spec.pool("pattern", tax)
    color_pool = spec.pool("color", tax)

    truth = SceneTruth(image_id, split, n)
    slot = w // n if n else w
    for j in range(n):
        k = int(rng.integers(spec.parts_per_person[0], spec.parts_per_person[1] + 1))
        pw = int(rng.integers(min(3, slot), slot + 1))
        x0 = j * slot + int(rng.integers(0, slot - pw + 1))
        ph = int(rng.integers(max(2 * k, 2), h + 1))
        y0 = int(rng.integers(0, h - ph + 1))
        inst[y0:y0 + ph, x0:x0 + pw] = j + 1
        parts = []
        if k:
            bands = 2 + rng.multinomial(ph - 2 * k, [1.0 / k] * k)
            attrs = _pick_attributes(rng, k, spec, tax)
            y = y0
            for rows, a in zip(bands.tolist(), attrs):
                region = (slice(y, y + rows), slice(x0, x0 + pw))
                maps["attribute"][region] = a
                chars = (0, 0, 0)
                if a in tax.characterizable:
                    sizes = size_pool if a == tax.hair_index else size_plain
                    chars = (int(sizes[rng.integers(len(sizes))]),
                             int(pattern_pool[rng.integers(len(pattern_pool))]),
                             int(color_pool[rng.integers(len(color_pool))]))
                    for task, c in zip(("size", "pattern", "color"), chars):
                        maps[task][region] = c
                parts.append([a, *chars, rows, pw])
                y += rows
        truth.parts.append(parts)

    for task in SEMANTIC_TASKS:
        counts = np.bincount(maps[task].ravel(), minlength=tax.num_classes(task))
        truth.pixels[task] = {c: int(counts[c]) for c in range(1, tax.num_classes(task)) if counts[c]}
    label_maps = {t: LabelMap(t, maps[t]) for t in SEMANTIC_TASKS}
    label_maps["instance"] = LabelMap("instance", inst)
    sample = ImageSample(image_id, label_maps, split)
    return sample, prediction_from_sample(sample, 1.0), truth


def generate_dataset(n_images: int, seed: int = 0, spec: SceneSpec = SceneSpec(),
                     taxonomy: Optional[Taxonomy] = None, splits: Sequence[str] = ("train",)):
    """``n_images`` scenes; image ``i`` is seeded with ``[seed, i]``."""
    out = []
    for i in range(n_images):
        out.append(generate_scene([seed, i], spec, taxonomy, image_id=f"img{i:06d}",
                                  split=splits[i % len(splits)]))
    return out


def declared_totals(truths: Sequence[SceneTruth]) -> dict:
    """Dataset-level counts the stats scan must reproduce."""
    images_per_label = {t: Counter() for t in SEMANTIC_TASKS}
    pixels = {t: Counter() for t in SEMANTIC_TASKS}
    people = Counter()
    splits = Counter()
    for tr in truths:
        for t in SEMANTIC_TASKS:
            for c in tr.labels_present(t):
                images_per_label[t][c] += 1
            pixels[t].update(tr.pixels[t])
        people[tr.persons] += 1
        splits[tr.split] += 1
    return {
        "images": len(truths),
        "images_per_split": splits,
        "images_per_label": images_per_label,
        "pixels_per_class": pixels,
        "instances_total": sum(tr.persons for tr in truths),
        "people_per_image": people,
    }


def perfect_prediction(sample: ImageSample) -> Prediction:
    return prediction_from_sample(sample, 1.0)
