"""Synthetic fixtures, prediction degradations and the brute-force oracle."""
from .generator import (RNG_NAME, SEEDING_RULE, SceneSpec, SceneTruth, SpecInfeasible,
                        declared_totals, generate_dataset, generate_scene, make_rng,
                        perfect_prediction)
from .oracle import compare_reports, naive_eval
from .perturb import PerturbationSpec, erode_regions, perturb

__all__ = [
    "RNG_NAME", "SEEDING_RULE", "SceneSpec", "SceneTruth", "SpecInfeasible", "declared_totals",
    "generate_dataset", "generate_scene", "make_rng", "perfect_prediction", "compare_reports",
    "naive_eval", "PerturbationSpec", "erode_regions", "perturb",
]
