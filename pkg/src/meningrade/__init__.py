"""Meningioma grading engine: slide tiling, criterion detection aggregation,
WHO rule-based grading, and a human-in-the-loop review service."""

__version__ = "0.1.0"

from .config import EngineConfig, ThresholdTable
from .core import CaseManifest, CriterionKind, Detection, DetectionStatus, Rect, SlideMeta, iou, um_to_px
from .grader import Grade, compute_grade

__all__ = [
    "CaseManifest",
    "CriterionKind",
    "Detection",
    "DetectionStatus",
    "EngineConfig",
    "Grade",
    "Rect",
    "SlideMeta",
    "ThresholdTable",
    "compute_grade",
    "iou",
    "um_to_px",
    "__version__",
]
