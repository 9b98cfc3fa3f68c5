"""Fingerprint liveness detection from densely sampled, rotation-normalized local patches."""

from fpliveness.image import GrayImage, center_crop, load_image, mean_intensity, rotate_about_center
from fpliveness.orientation import GridParams, OrientationField, build_orientation_field
from fpliveness.patches import Patch, PatchParams, crop_amount, dense_sample, extract_patch
from fpliveness.metrics import (
    ConfusionCounts,
    EvalReport,
    FingerprintResult,
    accuracy,
    ace,
    aggregate,
    confusion,
    decide,
    far,
    frr,
)

__version__ = "0.1.0"

__all__ = [
    "GrayImage",
    "load_image",
    "mean_intensity",
    "rotate_about_center",
    "center_crop",
    "GridParams",
    "OrientationField",
    "build_orientation_field",
    "Patch",
    "PatchParams",
    "crop_amount",
    "extract_patch",
    "dense_sample",
    "ConfusionCounts",
    "EvalReport",
    "FingerprintResult",
    "aggregate",
    "decide",
    "confusion",
    "far",
    "frr",
    "ace",
    "accuracy",
]
