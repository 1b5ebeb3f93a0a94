"""Dataset manifests, statistics, schema validation and report emission."""
from .io import (
    DatasetManifest,
    ManifestEntry,
    ManifestError,
    ManifestSource,
    RasterError,
    load_manifest,
    load_prediction,
    load_sample,
    save_manifest,
    save_prediction,
)
from .report import canonical_json, emit_report, parse_table, render_table
from .stats import StatsReport, scan_samples, scan_stats
from .validate import ValidationReport, Violation, validate_manifest, validate_sample

__all__ = [
    "DatasetManifest", "ManifestEntry", "ManifestError", "ManifestSource", "RasterError",
    "load_manifest", "load_prediction", "load_sample", "save_manifest", "save_prediction",
    "canonical_json", "emit_report", "parse_table", "render_table",
    "StatsReport", "scan_samples", "scan_stats",
    "ValidationReport", "Violation", "validate_manifest", "validate_sample",
]
