"""Command-line front end: ``eval``, ``stats``, ``validate`` and ``synth``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import engine
from .dataset_tools import io as dio
from .dataset_tools.report import canonical_json, render_table
from .dataset_tools.stats import scan_stats
from .dataset_tools.validate import DEFAULT_TOLERANCE, validate_manifest
from .instance_metrics import DEFAULT_THRESHOLDS, GRANULARITIES, report_config
from .maskcore import SEMANTIC_TASKS, MaskError
from .semantic_metrics import MEAN_POLICIES
from .synth.generator import RNG_NAME, SEEDING_RULE, SceneSpec, declared_totals, generate_dataset
from .synth.oracle import naive_eval
from .synth.perturb import PerturbationSpec, perturb
from .taxonomy import SchemaError, load_taxonomy_file

log = logging.getLogger("ccihp_eval")

METRIC_ALIASES = {"miou": "miou", "apr": "ap_r", "ap_r": "ap_r", "app": "ap_p", "ap_p": "ap_p",
                  "apcr": "ap_cr", "ap_cr": "ap_cr"}
INPUT_ERRORS = (dio.ManifestError, dio.RasterError, MaskError, SchemaError, OSError, ValueError)


class InputError(Exception):
    pass


def parse_thresholds(text: str) -> tuple[float, ...]:
    """``lo:hi:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        try:
            lo, hi, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise InputError(f"bad threshold range {text!r}") from None
        if step <= 0 or hi < lo:
            raise InputError(f"bad threshold range {text!r}")
        n = int(round((hi - lo) / step)) + 1
        values = tuple(round(lo + i * step, 10) for i in range(n))
    else:
        values = tuple(float(v) for v in text.split(","))
    try:
        engine.check_thresholds(values)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return values


def parse_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return int(lo), int(hi or lo)


def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# commands

def run_eval(args) -> int:
    manifest = dio.load_manifest(args.gt)
    taxonomy = load_taxonomy_file(args.taxonomy) if args.taxonomy else manifest.load_taxonomy()
    tasks = tuple(_csv(args.tasks)) if args.tasks else SEMANTIC_TASKS
    try:
        metrics = tuple(dict.fromkeys(METRIC_ALIASES[m] for m in _csv(args.metrics)))
    except KeyError as exc:
        raise InputError(f"unknown metric {exc.args[0]!r}") from None
    thresholds = parse_thresholds(args.thresholds) if args.thresholds else DEFAULT_THRESHOLDS
    settings = engine.EvalSettings(tasks=tasks, metrics=metrics, thresholds=thresholds,
                                   granularity=args.unit_granularity)
    pred_dir = Path(args.pred) if args.pred else None
    if pred_dir is not None and not pred_dir.is_dir():
        raise InputError(f"prediction directory {pred_dir} does not exist")

    sources = [dio.ManifestSource(manifest, e, pred_dir) for e in manifest.entries]
    if args.engine == "main":
        report = engine.evaluate(sources, taxonomy, settings, args.workers)
    else:
        samples, preds = [], {}
        for s in sorted(sources, key=lambda s: s.image_id):
            sample, pred = s.load()
            samples.append(sample)
            if pred is not None:
                preds[sample.image_id] = pred
        report = naive_eval(samples, preds, taxonomy, thresholds, tasks, metrics, args.unit_granularity)
        _decorate_naive(report, thresholds, args.unit_granularity)

    missing = report["metadata"]["missing_predictions"]
    for entry in report.get("miou", {}).values():
        entry["mean"] = entry["mean_foreground" if args.mean_policy == "foreground_only"
                              else "mean_with_background"]
    # worker count and output paths are left out so reports stay byte-identical
    report["metadata"]["config"] = {
        "gt": str(args.gt),
        "pred": None if pred_dir is None else str(pred_dir),
        "tasks": list(tasks),
        "metrics": list(metrics),
        "thresholds": list(thresholds),
        "mean_policy": args.mean_policy,
        "tie_break": "score_desc_then_ingest_order_asc",
        "unit_granularity": args.unit_granularity,
        "engine": args.engine,
        "require_complete": args.require_complete,
        "taxonomy": args.taxonomy or manifest.taxonomy,
    }
    _write(args.out, canonical_json(report))
    if args.table:
        _write(args.table, render_table(report, taxonomy))
    if missing:
        log.warning("%d image(s) had no prediction file", len(missing))
        if args.require_complete:
            return 1
    return 0


def _decorate_naive(report: dict, thresholds, granularity: str) -> None:
    """Give naive AP blocks the same envelope as the engine's ApReport JSON."""
    cfg = report_config(thresholds, unit_granularity=granularity)
    blocks = [("ap_r", report.get("ap_r"), None), ("ap_p", report.get("ap_p"), None)]
    blocks += [("ap_cr", b, t) for t, b in report.get("ap_cr", {}).items()]
    for metric, block, task in blocks:
        if block is None:
            continue
        block.update({"metric": metric, "thresholds": list(thresholds), "config": cfg})
        if task is not None:
            block["task"] = task


def run_stats(args) -> int:
    manifest = dio.load_manifest(args.gt)
    taxonomy = load_taxonomy_file(args.taxonomy) if args.taxonomy else manifest.load_taxonomy()
    stats = scan_stats(manifest, args.workers).to_json(taxonomy)
    _write(args.out, canonical_json(stats))
    if args.table:
        _write(args.table, render_table({"stats": stats}, taxonomy))
    return 1 if stats["errors"] else 0


def run_validate(args) -> int:
    manifest = dio.load_manifest(args.gt)
    taxonomy = load_taxonomy_file(args.taxonomy) if args.taxonomy else manifest.load_taxonomy()
    report = validate_manifest(manifest, taxonomy, args.workers, args.tolerance)
    doc = report.to_json()
    doc["strict"] = args.strict
    _write(args.out, canonical_json(doc))
    if report.has_errors or (args.strict and not report.is_empty):
        return 1
    return 0


def run_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    taxonomy = load_taxonomy_file(args.taxonomy)
    spec = SceneSpec(width=args.width, height=args.height, persons=parse_range(args.persons),
                     parts_per_person=parse_range(args.parts))
    relabel = {t: args.relabel_prob for t in SEMANTIC_TASKS} if args.relabel_prob else {}
    pspec = PerturbationSpec(mask_erosion=args.erosion, score_noise=args.score_noise,
                             drop_instance_prob=args.drop_prob, relabel_prob=relabel, seed=args.seed)
    scenes = generate_dataset(args.images, args.seed, spec, taxonomy, splits=tuple(_csv(args.splits)))
    entries, truths, applied = [], [], {}
    pred_dir = out / "pred"
    pred_dir.mkdir(exist_ok=True)
    for i, (sample, pred, truth) in enumerate(scenes):
        entries.append(dio.write_sample(sample, out))
        truths.append(truth)
        if pspec != PerturbationSpec(seed=args.seed):
            pred, record = perturb(pred, PerturbationSpec(
                pspec.mask_erosion, pspec.score_noise, pspec.drop_instance_prob,
                pspec.relabel_prob, seed=args.seed * 1_000_003 + i), taxonomy)
            applied[sample.image_id] = record
        dio.save_prediction(pred, dio.prediction_path(pred_dir, sample.image_id))
    dio.save_manifest(dio.DatasetManifest(out, entries, args.taxonomy), out / "manifest.json")
    totals = declared_totals(truths)
    truth_doc = {
        "rng": RNG_NAME,
        "seeding": SEEDING_RULE,
        "seed": args.seed,
        "spec": {"width": spec.width, "height": spec.height, "persons": list(spec.persons),
                 "parts_per_person": list(spec.parts_per_person)},
        "totals": {
            "images": totals["images"],
            "instances_total": totals["instances_total"],
            "images_per_split": dict(totals["images_per_split"]),
            "people_per_image": {str(k): v for k, v in sorted(totals["people_per_image"].items())},
            "images_per_label": {t: {taxonomy.class_name(t, c): n for c, n in sorted(v.items())}
                                 for t, v in totals["images_per_label"].items()},
        },
        "images": [t.to_json() for t in truths],
        "perturbations": applied,
    }
    (out / "truth.json").write_text(canonical_json(truth_doc))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccihp-eval", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=True):
        p.add_argument("--gt", required=True, help="ground-truth manifest JSON")
        p.add_argument("--taxonomy", help="taxonomy JSON (default: manifest's, else CCIHP)")
        p.add_argument("--out", help="output file (default: stdout)")
        if workers:
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="compute mIoU and AP metrics")
    common(p)
    p.add_argument("--pred", help="directory of <image_id>.json prediction files")
    p.add_argument("--tasks", help="comma list of attribute,size,pattern,color")
    p.add_argument("--metrics", default="miou,apr,app,apcr")
    p.add_argument("--thresholds", help="lo:hi:step or comma list (default 0.1:0.9:0.1)")
    p.add_argument("--mean-policy", choices=MEAN_POLICIES, default="foreground_only")
    p.add_argument("--unit-granularity", choices=GRANULARITIES, default="per_attribute_region")
    p.add_argument("--engine", choices=("main", "naive"), default="main")
    p.add_argument("--table", help="also write the per-class percentage table here")
    p.add_argument("--require-complete", action="store_true",
                   help="exit 1 when any image lacks a prediction file")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("stats", help="dataset statistics")
    common(p)
    p.add_argument("--table", help="also write images-per-label tables here")
    p.set_defaults(func=run_stats)

    p = sub.add_parser("validate", help="check rasters against the schema")
    common(p)
    p.add_argument("--strict", action="store_true", help="fail on warnings too")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.set_defaults(func=run_validate)

    p = sub.add_parser("synth", help="write a synthetic fixture dataset with predictions")
    p.add_argument("--out", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--persons", default="0:5")
    p.add_argument("--parts", default="1:6")
    p.add_argument("--splits", default="train")
    p.add_argument("--erosion", type=int, default=0)
    p.add_argument("--score-noise", type=float, default=0.0)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--relabel-prob", type=float, default=0.0)
    p.set_defaults(func=run_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        log.error("--workers must be >= 1")
        return 1
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        log.error("%s", exc)
        return 1
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
