"""Shared domain types: slides, cases, rectangles, detections, and unit conversions.

All geometry is stored in level-0 pixel coordinates of the owning slide;
pyramid levels are derived views.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import InvalidMetadataError, MissingInputError, SchemaViolationError


class Stain(str, Enum):
    HE = "HE"
    KI67 = "KI67"


class CriterionKind(str, Enum):
    """The eight AI-examined grading criteria plus the manually-assigned subtype."""

    MITOTIC_COUNT = "MitoticCount"
    KI67_INDEX = "Ki67Index"
    HYPERCELLULARITY = "Hypercellularity"
    NECROSIS = "Necrosis"
    SMALL_CELL = "SmallCell"
    PROMINENT_NUCLEOLI = "ProminentNucleoli"
    SHEETING = "Sheeting"
    BRAIN_INVASION = "BrainInvasion"
    SUBTYPE = "Subtype"


#: Criteria whose positives come from a probability classifier.
SCORED_CRITERIA = (
    CriterionKind.MITOTIC_COUNT,
    CriterionKind.NECROSIS,
    CriterionKind.PROMINENT_NUCLEOLI,
    CriterionKind.SHEETING,
)

#: The five histological features counted toward the three-of-five rule,
#: in guideline listing order.
FIVE_FEATURES = (
    CriterionKind.HYPERCELLULARITY,
    CriterionKind.PROMINENT_NUCLEOLI,
    CriterionKind.SHEETING,
    CriterionKind.NECROSIS,
    CriterionKind.SMALL_CELL,
)


class DetectionStatus(str, Enum):
    UNREVIEWED = "unreviewed"
    APPROVED = "approved"
    DECLINED = "declined"
    UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in level-0 pixels of a specific slide."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise InvalidMetadataError(f"rect must have positive extent, got {self}")
        if self.x < 0 or self.y < 0:
            raise InvalidMetadataError(f"rect origin must be non-negative, got {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def center(self) -> tuple[int, int]:
        return (self.x + self.w // 2, self.y + self.h // 2)

    def contains(self, other: "Rect") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def contains_point(self, px: int, py: int) -> bool:
        return self.x <= px < self.x2 and self.y <= py < self.y2

    def intersects(self, other: "Rect") -> bool:
        return (
            self.x < other.x2
            and other.x < self.x2
            and self.y < other.y2
            and other.y < self.y2
        )

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_json(cls, obj: dict) -> "Rect":
        try:
            return cls(int(obj["x"]), int(obj["y"]), int(obj["w"]), int(obj["h"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolationError(f"malformed rect object: {obj!r}") from exc


def um_to_px(length_um: float, mpp: float) -> int:
    """Convert a physical length to level-0 pixels, rounding to the nearest
    integer with ties away from zero."""
    if mpp <= 0:
        raise InvalidMetadataError(f"mpp must be positive, got {mpp}")
    if length_um < 0:
        raise InvalidMetadataError(f"length must be non-negative, got {length_um}")
    return int(math.floor(length_um / mpp + 0.5))


def iou(a: Rect, b: Rect) -> float:
    """Intersection-over-union of two rects; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def map_rect_between_slides(rect: Rect, mpp_src: float, mpp_dst: float) -> Rect:
    """Proportionally map a rect between paired slides of different resolution
    (destination coords = source coords * mpp_src / mpp_dst)."""
    if mpp_src <= 0 or mpp_dst <= 0:
        raise InvalidMetadataError("mpp values must be positive")
    f = mpp_src / mpp_dst
    x = int(math.floor(rect.x * f + 0.5))
    y = int(math.floor(rect.y * f + 0.5))
    w = max(1, int(math.floor(rect.w * f + 0.5)))
    h = max(1, int(math.floor(rect.h * f + 0.5)))
    return Rect(x, y, w, h)


@dataclass(frozen=True)
class SlideMeta:
    slide_id: str
    stain: Stain
    width_px: int
    height_px: int
    mpp: float
    levels: int
    pyramid_path: str
    nodes: tuple[Rect, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.mpp <= 0:
            raise InvalidMetadataError(f"slide {self.slide_id}: mpp must be > 0")
        if self.width_px < 1 or self.height_px < 1:
            raise InvalidMetadataError(f"slide {self.slide_id}: dimensions must be >= 1")
        if self.levels < 1:
            raise InvalidMetadataError(f"slide {self.slide_id}: levels must be >= 1")
        bounds = Rect(0, 0, self.width_px, self.height_px)
        for node in self.nodes:
            if not bounds.contains(node):
                raise InvalidMetadataError(
                    f"slide {self.slide_id}: node {node} exceeds slide bounds "
                    f"{self.width_px}x{self.height_px}"
                )

    @property
    def bounds(self) -> Rect:
        return Rect(0, 0, self.width_px, self.height_px)

    def level_dims(self, level: int) -> tuple[int, int]:
        """Dimensions of pyramid level `level` (each level halves, ceil)."""
        if not 0 <= level < self.levels:
            raise InvalidMetadataError(f"slide {self.slide_id}: no level {level}")
        return (
            max(1, -(-self.width_px // (1 << level))),
            max(1, -(-self.height_px // (1 << level))),
        )

    def to_json(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "stain": self.stain.value,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "mpp": self.mpp,
            "levels": self.levels,
            "pyramid_path": self.pyramid_path,
            "nodes": [n.to_json() for n in self.nodes],
        }


@dataclass(frozen=True)
class CaseManifest:
    case_id: str
    slides: tuple[SlideMeta, ...]
    pairings: tuple[tuple[str, str | None], ...]

    def __post_init__(self):
        ids = {s.slide_id for s in self.slides}
        if len(ids) != len(self.slides):
            raise InvalidMetadataError(f"case {self.case_id}: duplicate slide ids")
        if not any(s.stain == Stain.HE for s in self.slides):
            raise SchemaViolationError(
                f"case {self.case_id}: at least one H&E slide is required"
            )
        for he_id, ki_id in self.pairings:
            if he_id not in ids:
                raise SchemaViolationError(
                    f"case {self.case_id}: pairing references unknown slide {he_id!r}"
                )
            if ki_id is not None and ki_id not in ids:
                raise SchemaViolationError(
                    f"case {self.case_id}: pairing references unknown slide {ki_id!r}"
                )

    def slide(self, slide_id: str) -> SlideMeta:
        for s in self.slides:
            if s.slide_id == slide_id:
                return s
        raise InvalidMetadataError(f"case {self.case_id}: unknown slide {slide_id!r}")

    def he_slides(self) -> list[SlideMeta]:
        return [s for s in self.slides if s.stain == Stain.HE]

    def ki67_slides(self) -> list[SlideMeta]:
        return [s for s in self.slides if s.stain == Stain.KI67]

    def ki67_for(self, he_slide_id: str) -> str | None:
        for he_id, ki_id in self.pairings:
            if he_id == he_slide_id:
                return ki_id
        return None

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "slides": [s.to_json() for s in self.slides],
            "pairings": [{"he": he, "ki67": ki} for he, ki in self.pairings],
        }


def manifest_from_json(obj: dict) -> CaseManifest:
    """Build a validated CaseManifest from its canonical JSON form."""
    if not isinstance(obj, dict):
        raise SchemaViolationError("manifest must be a JSON object")
    try:
        case_id = obj["case_id"]
        raw_slides = obj["slides"]
        raw_pairings = obj.get("pairings", [])
    except KeyError as exc:
        raise SchemaViolationError(f"manifest missing required field {exc}") from exc
    if not isinstance(case_id, str) or not case_id:
        raise SchemaViolationError("case_id must be a non-empty string")
    if not isinstance(raw_slides, list):
        raise SchemaViolationError("slides must be a list")

    slides = []
    for raw in raw_slides:
        try:
            stain = Stain(raw["stain"])
        except (KeyError, ValueError) as exc:
            raise SchemaViolationError(f"slide has invalid stain: {raw!r}") from exc
        try:
            slides.append(
                SlideMeta(
                    slide_id=str(raw["slide_id"]),
                    stain=stain,
                    width_px=int(raw["width_px"]),
                    height_px=int(raw["height_px"]),
                    mpp=float(raw["mpp"]),
                    levels=int(raw["levels"]),
                    pyramid_path=str(raw["pyramid_path"]),
                    nodes=tuple(Rect.from_json(n) for n in raw.get("nodes", [])),
                )
            )
        except KeyError as exc:
            raise SchemaViolationError(f"slide missing required field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaViolationError(f"slide has malformed field: {exc}") from exc

    pairings = []
    for raw in raw_pairings:
        if not isinstance(raw, dict) or "he" not in raw:
            raise SchemaViolationError(f"malformed pairing: {raw!r}")
        pairings.append((str(raw["he"]), raw.get("ki67")))

    return CaseManifest(case_id=case_id, slides=tuple(slides), pairings=tuple(pairings))


def load_manifest(path: str | Path) -> CaseManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"manifest not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolationError(f"manifest is not valid JSON: {exc}") from exc
    return manifest_from_json(obj)


@dataclass(frozen=True)
class Detection:
    """One localized AI finding on a slide."""

    detection_id: str
    slide_id: str
    criterion: CriterionKind
    bbox: Rect
    prob: float
    saliency_ref: str | None = None
    status: DetectionStatus = DetectionStatus.UNREVIEWED

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise InvalidMetadataError(
                f"detection {self.detection_id}: prob {self.prob} outside [0,1]"
            )

    def with_status(self, status: DetectionStatus) -> "Detection":
        return replace(self, status=status)

    def to_json(self) -> dict:
        return {
            "detection_id": self.detection_id,
            "slide_id": self.slide_id,
            "criterion": self.criterion.value,
            "bbox": self.bbox.to_json(),
            "prob": self.prob,
            "saliency_ref": self.saliency_ref,
            "status": self.status.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        return cls(
            detection_id=obj["detection_id"],
            slide_id=obj["slide_id"],
            criterion=CriterionKind(obj["criterion"]),
            bbox=Rect.from_json(obj["bbox"]),
            prob=float(obj["prob"]),
            saliency_ref=obj.get("saliency_ref"),
            status=DetectionStatus(obj.get("status", "unreviewed")),
        )


def detection_id_for(slide_id: str, criterion: CriterionKind, bbox: Rect) -> str:
    """Deterministic detection id derived from position, stable across runs
    and worker counts."""
    return f"det:{slide_id}:{criterion.value}:{bbox.x}:{bbox.y}:{bbox.w}:{bbox.h}"
