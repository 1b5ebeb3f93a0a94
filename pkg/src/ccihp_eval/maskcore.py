"""Raster and mask primitives: label maps, binary masks, RLE codec and IoU."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TASKS = ("attribute", "size", "pattern", "color", "instance")
SEMANTIC_TASKS = ("attribute", "size", "pattern", "color")
CHARACTERISTIC_TASKS = ("size", "pattern", "color")


class MaskError(ValueError):
    """Base class for raster/mask errors."""


class DimensionMismatch(MaskError):
    pass


class ClassOutOfRange(MaskError):
    pass


class CountsMismatch(MaskError):
    pass


class NonCanonical(MaskError):
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    if array.flags.writeable:
        array = array.copy()
        array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Row-major grid of non-negative class indices for one task.

    ``max_label`` is the largest legal value (class count for semantic
    tasks, person count for instance maps). When given it is enforced.
    """

    task: str
    data: np.ndarray
    max_label: Optional[int] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionMismatch(f"label map must be 2-D, got shape {data.shape}")
        if data.size and data.min() < 0:
            raise ClassOutOfRange("label map holds negative values")
        if not np.issubdtype(data.dtype, np.integer):
            data = data.astype(np.int64)
        if self.max_label is not None and data.size and int(data.max()) > self.max_label:
            raise ClassOutOfRange(
                f"{self.task} map value {int(data.max())} exceeds {self.max_label}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (self.task == other.task and self.shape == other.shape
                and bool(np.array_equal(self.data, other.data)))

    __hash__ = None

    @classmethod
    def zeros(cls, task: str, height: int, width: int) -> "LabelMap":
        return cls(task, np.zeros((height, width), dtype=np.uint16 if task == "instance" else np.uint8))


class BinaryMask:
    """Immutable row-major membership grid with a cached popcount."""

    __slots__ = ("bits", "area")

    def __init__(self, bits):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2 or 0 in bits.shape:
            raise DimensionMismatch(f"mask must be a non-empty 2-D grid, got {bits.shape}")
        self.bits = _frozen(bits)
        self.area = int(np.count_nonzero(self.bits))

    @classmethod
    def empty(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        _check_same_shape(self, other)
        return BinaryMask(self.bits & other.bits)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        _check_same_shape(self, other)
        return BinaryMask(self.bits | other.bits)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None

    def __repr__(self):
        return f"BinaryMask({self.height}x{self.width}, area={self.area})"


@dataclass(frozen=True)
class RleMask:
    """Row-major run lengths, alternating background/foreground, background first."""

    size: tuple[int, int]
    counts: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(v) for v in self.size))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def to_json(self) -> dict:
        return {"size": list(self.size), "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        return cls(tuple(obj["size"]), tuple(obj["counts"]))


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} != {b.shape}")


def rle_encode(mask: BinaryMask) -> RleMask:
    flat = mask.bits.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(mask.shape, tuple(runs))


def check_rle(rle: RleMask) -> None:
    h, w = rle.size
    if h <= 0 or w <= 0:
        raise DimensionMismatch(f"non-positive RLE size {rle.size}")
    if not rle.counts:
        raise CountsMismatch("empty counts")
    if min(rle.counts) < 0:
        raise NonCanonical("negative run length")
    total = sum(rle.counts)
    if total != h * w:
        raise CountsMismatch(f"sum(counts)={total} != {h}x{w}")
    if 0 in rle.counts[1:]:
        raise NonCanonical("interior zero run")


def rle_decode(rle: RleMask) -> BinaryMask:
    check_rle(rle)
    counts = np.asarray(rle.counts, dtype=np.int64)
    values = (np.arange(counts.size) % 2).astype(bool)
    return BinaryMask(np.repeat(values, counts).reshape(rle.size))


def rle_foreground_index(rle: RleMask) -> np.ndarray:
    """Flat row-major indices of the foreground pixels, without building the grid."""
    check_rle(rle)
    counts = np.asarray(rle.counts, dtype=np.int64)
    ends = np.cumsum(counts)
    starts = ends - counts
    starts, lengths = starts[1::2], counts[1::2]
    if lengths.size == 0 or lengths.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    # each run contributes start, start+1, ...; offsets restart at every run
    offsets = np.arange(int(lengths.sum())) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return np.repeat(starts, lengths) + offsets


def class_mask(label_map: LabelMap, class_id: int, num_classes: Optional[int] = None) -> BinaryMask:
    """Pixels of ``label_map`` equal to ``class_id``.

    ``num_classes`` bounds the legal ids (background included); it defaults to
    the map's ``max_label`` when that is set.
    """
    limit = num_classes - 1 if num_classes is not None else label_map.max_label
    if class_id < 0 or (limit is not None and class_id > limit):
        raise ClassOutOfRange(f"class {class_id} outside 0..{limit}")
    return BinaryMask(label_map.data == class_id)


def intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    _check_same_shape(a, b)
    return int(np.count_nonzero(a.bits & b.bits))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union

