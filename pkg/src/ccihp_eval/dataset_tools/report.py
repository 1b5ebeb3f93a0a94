"""Report emission: canonical JSON and per-class percentage tables."""
from __future__ import annotations

import json
import math
from typing import Optional

import numpy as np

from ..taxonomy import Taxonomy, default_taxonomy

# short column heads used by the published per-class tables
TABLE_HEADS = {
    "Short/small": "Short",
    "Long/large": "Long",
    "Undetermined": "Undet.",
    "Sparse/bald": "Sparse",
    "Geometrical": "Geom.",
}
CHARACTERISTIC_ORDER = ("color", "size", "pattern")
ROW_LABELS = {
    "miou_foreground_only": "mIoU",
    "miou_with_background": "mIoU+bg",
    "ap_r": "AP^r_vol",
    "ap_p": "AP^p_vol",
    "ap_cr": "AP^cr_vol",
    "images": "images",
}


# ---------------------------------------------------------------------------
# canonical JSON

def _format_float(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {v!r} cannot be serialized")
    text = format(v, ".17g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def _encode(obj, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{_encode(str(k), indent, level)}: {_encode(v, indent, level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple)) for x in obj):
            return "[" + ", ".join(_encode(x, indent, level + 1) for x in obj) + "]"
        return "[" + pad + ("," + pad).join(_encode(x, indent, level + 1) for x in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj, indent: int = 2) -> str:
    """Sorted keys, floats at 17 significant digits: equal inputs give equal bytes."""
    return _encode(obj, indent, 0) + "\n"


# ---------------------------------------------------------------------------
# tables

def format_percent(value: Optional[float]) -> str:
    if value is None:
        return "-"
    # round first so binary noise such as 24.499999999999996 prints as 24.5
    return f"{round(value * 100, 9):.1f}"


def column_heads(names) -> list[str]:
    return [TABLE_HEADS.get(n, n) for n in names]


def _row(label: str, overall, values) -> str:
    cells = [label, format_percent(overall), *(format_percent(v) for v in values)]
    return " | ".join(cells)


def _ap_row(label: str, ap: dict, names) -> str:
    per_class = ap["per_class"]
    return _row(label, ap["overall"], [per_class.get(n, {}).get("volume") for n in names])


def _miou_rows(entry: dict, names) -> list[str]:
    values = [entry["per_class"].get(n) for n in names]
    return [_row(ROW_LABELS["miou_foreground_only"], entry.get("mean_foreground"), values),
            _row(ROW_LABELS["miou_with_background"], entry.get("mean_with_background"), values)]


def render_table(results: dict, taxonomy: Optional[Taxonomy] = None) -> str:
    """Per-class percentages with one decimal, ``all`` column first.

    Blocks follow the published layout: attributes carry the mIoU and AP^r
    rows, persons the AP^p row, each characteristic task its mIoU and AP^cr
    rows.
    """
    tax = taxonomy or default_taxonomy()
    blocks = []
    miou = results.get("miou", {})
    ap_cr = results.get("ap_cr", {})

    def block(title, names, rows):
        if rows:
            header = " | ".join(["metric", "all", *column_heads(names)])
            blocks.append("\n".join([f"## {title}", header, *rows]))

    names = tax.names("attribute")
    rows = []
    if "attribute" in miou:
        rows += _miou_rows(miou["attribute"], names)
    if "ap_r" in results:
        rows.append(_ap_row(ROW_LABELS["ap_r"], results["ap_r"], names))
    block("attribute", names, rows)

    if "ap_p" in results:
        block("person", [], [_row(ROW_LABELS["ap_p"], results["ap_p"]["overall"], [])])

    for task in CHARACTERISTIC_ORDER:
        names = tax.names(task)
        rows = []
        if task in miou:
            rows += _miou_rows(miou[task], names)
        if task in ap_cr:
            rows.append(_ap_row(ROW_LABELS["ap_cr"], ap_cr[task], names))
        block(task, names, rows)

    stats = results.get("stats")
    if stats:
        for task in ("attribute", *CHARACTERISTIC_ORDER):
            names = tax.names(task)
            counts = stats["images_per_label"][task]
            header = " | ".join(["metric", "all", *column_heads(names)])
            row = " | ".join([ROW_LABELS["images"], str(stats["images"]),
                              *(str(counts.get(n, 0)) for n in names)])
            blocks.append("\n".join([f"## stats {task}", header, row]))

    if not blocks:
        return "metric | all\n"
    return "\n\n".join(blocks) + "\n"


def parse_table(text: str) -> dict:
    """Inverse of :func:`render_table`: block -> row label -> column head -> value."""
    out: dict = {}
    current = None
    header: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("## "):
            current = line[3:]
            out[current] = {}
            header = []
            continue
        cells = [c.strip() for c in line.split("|")]
        if cells[0] == "metric":
            header = cells[1:]
            continue
        if current is None:
            continue
        values = [None if c == "-" else float(c) for c in cells[1:]]
        out[current][cells[0]] = dict(zip(header, values))
    return out


def emit_report(results: dict, fmt: str = "json", taxonomy: Optional[Taxonomy] = None) -> str:
    if fmt == "json":
        return canonical_json(results)
    if fmt == "table":
        return render_table(results, taxonomy)
    raise ValueError(f"unknown report format {fmt!r}")
