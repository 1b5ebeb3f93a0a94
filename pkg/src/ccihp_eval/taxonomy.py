"""Class catalogs for the five label spaces and the characterization rules."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from os import PathLike
from typing import Mapping, Optional, Union

from .maskcore import CHARACTERISTIC_TASKS, ClassOutOfRange

EXPECTED_COUNTS = {"attribute": 19, "size": 4, "pattern": 4, "color": 12}
_DOC_KEYS = {"attribute": "attributes", "size": "sizes", "pattern": "patterns", "color": "colors"}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class TaskCatalog:
    task: str
    names: tuple[str, ...]

    @property
    def class_count(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Taxonomy:
    attribute_classes: tuple[str, ...]
    size_classes: tuple[str, ...]
    pattern_classes: tuple[str, ...]
    color_classes: tuple[str, ...]
    characterizable: frozenset[int]
    hair_index: int
    sparse_index: int

    def __post_init__(self):
        for task, expected in EXPECTED_COUNTS.items():
            names = self.names(task)
            if len(names) != expected:
                raise SchemaError(f"{task}: expected {expected} classes, got {len(names)}")
            if len(set(names)) != len(names):
                raise SchemaError(f"{task}: duplicate class names")
        if not all(1 <= a <= 19 for a in self.characterizable):
            raise SchemaError("characterizable holds ids outside 1..19")
        if self.hair_index not in self.characterizable:
            raise SchemaError("hair attribute must be characterizable")
        if not 1 <= self.sparse_index <= len(self.size_classes):
            raise SchemaError("sparse size index out of range")

    def names(self, task: str) -> tuple[str, ...]:
        """Foreground class names of ``task``; index ``i`` names class ``i + 1``."""
        try:
            return {
                "attribute": self.attribute_classes,
                "size": self.size_classes,
                "pattern": self.pattern_classes,
                "color": self.color_classes,
            }[task]
        except KeyError:
            raise ValueError(f"no class catalog for task {task!r}") from None

    def catalog(self, task: str) -> TaskCatalog:
        return TaskCatalog(task, self.names(task))

    def num_classes(self, task: str) -> int:
        """Class count including background."""
        return len(self.names(task)) + 1

    def class_name(self, task: str, class_id: int) -> str:
        if class_id == 0:
            return "background"
        names = self.names(task)
        if not 1 <= class_id <= len(names):
            raise ClassOutOfRange(f"{task} class {class_id} outside 1..{len(names)}")
        return names[class_id - 1]

    def class_index(self, task: str, name: str) -> int:
        try:
            return self.names(task).index(name) + 1
        except ValueError:
            raise SchemaError(f"unknown {task} class {name!r}") from None

    def characterizable_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.characterizable))

    def to_document(self) -> dict:
        return {
            "attributes": list(self.attribute_classes),
            "sizes": list(self.size_classes),
            "patterns": list(self.pattern_classes),
            "colors": list(self.color_classes),
            "characterizable": [self.attribute_classes[i - 1] for i in self.characterizable_ids()],
            "hair": self.attribute_classes[self.hair_index - 1],
            "sparse": self.size_classes[self.sparse_index - 1],
        }


def _default_document() -> dict:
    text = resources.files("ccihp_eval").joinpath("data/ccihp_taxonomy.json").read_text()
    return json.loads(text)


def load_taxonomy(document: Union[str, Mapping, None] = None) -> Taxonomy:
    """Build a taxonomy from a JSON document (text or parsed mapping).

    ``None`` loads the CCIHP catalog shipped with the package.
    """
    if document is None:
        doc = _default_document()
    elif isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"taxonomy document is not valid JSON: {exc}") from exc
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        raise SchemaError("taxonomy document must be an object")

    missing = [k for k in (*_DOC_KEYS.values(), "characterizable") if k not in doc]
    if missing:
        raise SchemaError(f"taxonomy document lacks keys {missing}")
    lists = {}
    for task, key in _DOC_KEYS.items():
        names = doc[key]
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise SchemaError(f"{key} must be a list of names")
        lists[task] = tuple(names)
        if len(names) != EXPECTED_COUNTS[task]:
            raise SchemaError(f"{key}: expected {EXPECTED_COUNTS[task]} classes, got {len(names)}")

    def attr_id(ref) -> int:
        if isinstance(ref, int) and not isinstance(ref, bool):
            return ref
        if ref in lists["attribute"]:
            return lists["attribute"].index(ref) + 1
        raise SchemaError(f"unknown attribute {ref!r}")

    hair = attr_id(doc.get("hair", "Hair"))
    sparse_name = doc.get("sparse", "Sparse/bald")
    if sparse_name not in lists["size"]:
        raise SchemaError(f"unknown sparse size class {sparse_name!r}")
    return Taxonomy(
        attribute_classes=lists["attribute"],
        size_classes=lists["size"],
        pattern_classes=lists["pattern"],
        color_classes=lists["color"],
        characterizable=frozenset(attr_id(r) for r in doc["characterizable"]),
        hair_index=hair,
        sparse_index=lists["size"].index(sparse_name) + 1,
    )


def load_taxonomy_file(path: Union[str, PathLike, None]) -> Taxonomy:
    if path is None:
        return load_taxonomy()
    with open(path) as fh:
        return load_taxonomy(fh.read())


def characterizable(tax: Taxonomy, attribute_id: int) -> bool:
    if not 1 <= attribute_id <= len(tax.attribute_classes):
        raise ClassOutOfRange(f"attribute {attribute_id} outside 1..{len(tax.attribute_classes)}")
    return attribute_id in tax.characterizable


def is_characteristic_task(task: str) -> bool:
    return task in CHARACTERISTIC_TASKS


_DEFAULT: Optional[Taxonomy] = None


def default_taxonomy() -> Taxonomy:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_taxonomy()
    return _DEFAULT
