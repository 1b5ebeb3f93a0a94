"""Evaluation engine and dataset toolkit for characterized human parsing."""
from .engine import EvalSettings, evaluate, evaluate_samples
from .maskcore import BinaryMask, LabelMap, RleMask, mask_iou, rle_decode, rle_encode
from .samples import ImageSample, PredInstance, Prediction
from .taxonomy import Taxonomy, default_taxonomy, load_taxonomy

__version__ = "0.1.0"

__all__ = [
    "EvalSettings", "evaluate", "evaluate_samples", "BinaryMask", "LabelMap", "RleMask",
    "mask_iou", "rle_decode", "rle_encode", "ImageSample", "PredInstance", "Prediction",
    "Taxonomy", "default_taxonomy", "load_taxonomy",
]
